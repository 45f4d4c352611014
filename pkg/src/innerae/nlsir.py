"""Stable image representations of input-affine nonlinear systems.

Plant:   x' = a(x) + B(x) u,   y = c(x) + D(x) u
SIR:     x' = abar(x) + B(x) V(x) v,   (u; y) = cbar(x) + Dbar(x) v

with abar = a + B g, cbar = [g; c + D g], Dbar = [V; D V], i.e. the plant under
the controller u = g(x) + V(x) v. The adjoint of the SIR's linearization is
realized through the costate of the Hamiltonian extension, swept backward in
time from p(T) = 0. Composing it with the SIR gives the estimator Pi, which is
idempotent and norm preserving when the SIR is inner.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .numlin import NumericalError
from .signals import SignalRecord, interior

FD_STEP = 1e-5


class DivergenceError(NumericalError):
    """State norm left the configured bound during integration."""


def fd_jacobian(f, x, step=FD_STEP):
    """Central differences of ``f`` at ``x``; derivative index is last."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        h = step * (1.0 + abs(x[k]))
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class AffineSystem:
    """Input-affine plant. Jacobian callables return the derivative index last:
    ``da(x)`` is n x n, ``dB(x)`` is n x p x n, ``dc(x)`` is m x n, ``dD(x)`` is m x p x n.
    Missing Jacobians fall back to central differences.
    """

    n: int
    p: int
    m: int
    a: Callable
    B: Callable
    c: Callable
    D: Callable
    da: Optional[Callable] = None
    dB: Optional[Callable] = None
    dc: Optional[Callable] = None
    dD: Optional[Callable] = None

    def jac(self, name, x):
        f = getattr(self, "d" + name)
        if f is not None:
            return np.asarray(f(x), dtype=float)
        return fd_jacobian(getattr(self, name), x)

    def check_dims(self, x):
        n, p, m = self.n, self.p, self.m
        shapes = {
            "a": (n,), "B": (n, p), "c": (m,), "D": (m, p),
            "da": (n, n), "dB": (n, p, n), "dc": (m, n), "dD": (m, p, n),
        }
        for name, shape in shapes.items():
            value = self.jac(name[1:], x) if len(name) == 2 else getattr(self, name)(x)
            out = np.shape(value)
            if out != shape:
                raise ValueError(f"{name}(x) has shape {out}, expected {shape}")


@dataclass(frozen=True)
class SirSystem:
    """SIR built from a plant and the controller pair (g, V)."""

    base: AffineSystem
    g: Callable
    V: Callable
    dg: Optional[Callable] = None
    dV: Optional[Callable] = None
    blowup: float = 1e6

    @property
    def n(self):
        return self.base.n

    @property
    def p(self):
        return self.base.p

    @property
    def m(self):
        return self.base.m

    def _dg(self, x):
        return np.asarray(self.dg(x)) if self.dg is not None else fd_jacobian(self.g, x)

    def _dV(self, x):
        return np.asarray(self.dV(x)) if self.dV is not None else fd_jacobian(self.V, x)

    def abar(self, x):
        return self.base.a(x) + self.base.B(x) @ self.g(x)

    def Bbar(self, x):
        """Latent input matrix B(x) V(x)."""
        return self.base.B(x) @ self.V(x)

    def cbar(self, x):
        g = self.g(x)
        return np.concatenate([g, self.base.c(x) + self.base.D(x) @ g])

    def Dbar(self, x):
        V = self.V(x)
        return np.vstack([V, self.base.D(x) @ V])

    def rhs(self, x, v):
        return self.abar(x) + self.Bbar(x) @ v

    def output(self, x, v):
        return self.cbar(x) + self.Dbar(x) @ v

    def state_jacobian(self, x, v):
        """d/dx of abar(x) + B(x)V(x)v."""
        b = self.base
        g = self.g(x)
        dB = b.jac("B", x)
        Vv = self.V(x) @ v
        return (
            b.jac("a", x)
            + np.einsum("ijk,j->ik", dB, g + Vv)
            + b.B(x) @ (self._dg(x) + np.einsum("ijk,j->ik", self._dV(x), v))
        )

    def output_jacobian(self, x, v):
        """d/dx of cbar(x) + Dbar(x)v."""
        b = self.base
        w = self.g(x) + self.V(x) @ v
        dw = self._dg(x) + np.einsum("ijk,j->ik", self._dV(x), v)
        return np.vstack([dw, b.jac("c", x) + np.einsum("ijk,j->ik", b.jac("D", x), w) + b.D(x) @ dw])


@dataclass
class InnerCertificate:
    """Candidate storage function P(x) >= 0 with gradient, and the states to test on."""

    storage: Callable
    gradient: Callable
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(len(self.states), -1) \
            if len(self.states) else np.zeros((0, 0))
        if len(self.states):
            n = self.states.shape[1]
            if abs(float(self.storage(np.zeros(n)))) > 1e-12:
                raise ValueError("storage function must vanish at the origin")
            if min(float(self.storage(x)) for x in self.states) < -1e-12:
                raise ValueError("storage function must be nonnegative")


@dataclass
class InnerReport:
    """Per-state residuals of the three inner conditions."""

    hjb: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cross: np.ndarray = field(default_factory=lambda: np.zeros(0))
    feedthrough: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def empty(self):
        return self.hjb.size == 0

    def max(self):
        if self.empty:
            return {}
        return {k: float(np.max(getattr(self, k))) for k in ("hjb", "cross", "feedthrough")}

    def mean(self):
        if self.empty:
            return {}
        return {k: float(np.mean(getattr(self, k))) for k in ("hjb", "cross", "feedthrough")}

    def worst(self):
        return max(self.max().values(), default=0.0)


def check_inner_conditions(sir: SirSystem, cert: InnerCertificate) -> InnerReport:
    """Residuals of  P_x abar + cbar'cbar/2 = 0,  P_x B V + cbar'Dbar = 0,  Dbar'Dbar = I."""
    if len(cert.states) == 0:
        return InnerReport()
    r1, r2, r3 = [], [], []
    I = np.eye(sir.p)
    for x in cert.states:
        Px = np.asarray(cert.gradient(x), dtype=float).ravel()
        cb = sir.cbar(x)
        Db = sir.Dbar(x)
        r1.append(abs(Px @ sir.abar(x) + 0.5 * cb @ cb))
        r2.append(np.linalg.norm(Px @ sir.Bbar(x) + cb @ Db))
        r3.append(np.linalg.norm(Db.T @ Db - I, 2))
    return InnerReport(np.array(r1), np.array(r2), np.array(r3))


def random_states(box, count, seed=0):
    """Uniform states in the box given as a sequence of (low, high) pairs."""
    box = np.asarray(box, dtype=float)
    rng = np.random.default_rng(seed)
    return rng.uniform(box[:, 0], box[:, 1], size=(count, len(box)))


# --- integration --------------------------------------------------------------


def _midpoints(values):
    return 0.5 * (values[:-1] + values[1:])


def _guard(sir, x, k):
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > sir.blowup:
        raise DivergenceError(f"state norm exceeded {sir.blowup:g} at sample {k}")


def _forward(sir: SirSystem, v, dt, x0, substeps=1):
    """RK4 on the SIR state with the latent linearly interpolated between samples."""
    N = v.shape[0]
    X = np.empty((N, sir.n))
    x = np.zeros(sir.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    h = dt / substeps
    for k in range(N):
        X[k] = x
        if k == N - 1:
            break
        v0, v1 = v[k], v[k + 1]
        for s in range(substeps):
            a, b = s / substeps, (s + 1) / substeps
            va, vb = v0 + a * (v1 - v0), v0 + b * (v1 - v0)
            vm = 0.5 * (va + vb)
            k1 = sir.rhs(x, va)
            k2 = sir.rhs(x + 0.5 * h * k1, vm)
            k3 = sir.rhs(x + 0.5 * h * k2, vm)
            k4 = sir.rhs(x + h * k3, vb)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        _guard(sir, x, k + 1)
    return X


def simulate_sir(sir: SirSystem, v: SignalRecord, x0=None, dt=None, substeps=1):
    """Drive the SIR with latent ``v``; returns the records (u, y)."""
    if v.n_channels != sir.p:
        raise ValueError(f"latent has {v.n_channels} channels, SIR expects {sir.p}")
    dt = v.dt if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    X = _forward(sir, v.values, dt, x0, substeps)
    Z = np.array([sir.output(x, vk) for x, vk in zip(X, v.values)])
    Z = Z.reshape(len(X), sir.p + sir.m)
    return SignalRecord(Z[:, : sir.p], dt, v.t0), SignalRecord(Z[:, sir.p:], dt, v.t0)


def _backward_costate(sir, X, v, z, dt):
    """Sweep p' = -J(x,v)'p - K(x,v)'z from p(T) = 0 back to the first sample."""
    N = len(X)
    n = sir.n
    Pc = np.zeros((N, n))
    if N < 2:
        return Pc
    # Hermite midpoint of the state trajectory, fourth-order accurate.
    F = np.array([sir.rhs(x, vk) for x, vk in zip(X, v)])
    Xm = _midpoints(X) + dt / 8.0 * (F[:-1] - F[1:])
    vm, zm = _midpoints(v), _midpoints(z)

    def f(x, vk, zk, p):
        return -sir.state_jacobian(x, vk).T @ p - sir.output_jacobian(x, vk).T @ zk

    p = np.zeros(n)
    h = -dt
    for k in range(N - 1, 0, -1):
        k1 = f(X[k], v[k], z[k], p)
        k2 = f(Xm[k - 1], vm[k - 1], zm[k - 1], p + 0.5 * h * k1)
        k3 = f(Xm[k - 1], vm[k - 1], zm[k - 1], p + 0.5 * h * k2)
        k4 = f(X[k - 1], v[k - 1], z[k - 1], p + h * k3)
        p = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(p)) or np.linalg.norm(p) > sir.blowup:
            raise DivergenceError(f"costate norm exceeded {sir.blowup:g} at sample {k - 1}")
        Pc[k - 1] = p
    return Pc


def encode_adjoint(sir: SirSystem, z: SignalRecord, dt=None, x0=None, max_iter=20, tol=1e-10):
    """Latent v = (D Sigma_I)' (u; y) from the Hamiltonian extension.

    The state of the extension is driven by its own output v, so the two
    passes (forward state, backward costate) are repeated until v settles.
    One pass is exact for linear systems.
    """
    if z.n_channels != sir.p + sir.m:
        raise ValueError(f"expected {sir.p + sir.m} stacked (u; y) channels, got {z.n_channels}")
    dt = z.dt if dt is None else dt
    Z = z.values
    v = np.zeros((len(Z), sir.p))
    for _ in range(max_iter):
        X = _forward(sir, v, dt, x0)
        Pc = _backward_costate(sir, X, v, Z, dt)
        v_new = np.array([sir.Bbar(x).T @ p + sir.Dbar(x).T @ zk for x, p, zk in zip(X, Pc, Z)])
        v_new = v_new.reshape(len(Z), sir.p)
        change = np.linalg.norm(v_new - v)
        scale = np.linalg.norm(v_new)
        v = v_new
        if change <= tol * max(scale, 1e-300):
            break
    return SignalRecord(v, dt, z.t0)


def estimator_pi(sir: SirSystem, z: SignalRecord, dt=None):
    """zhat = Sigma_I(encode_adjoint(z)) as a single stacked record."""
    v = encode_adjoint(sir, z, dt)
    u, y = simulate_sir(sir, v, dt=dt)
    return u.stack(y)


@dataclass
class EnergyBalance:
    balance: float
    latent_energy: float
    output_energy: float
    settled: bool
    final_state_norm: float


def verify_lossless_energy(sir: SirSystem, v: SignalRecord, settle_time, decay_tol=1e-6):
    """Relative mismatch |‖v‖² - ‖z‖²| / ‖v‖² with ``v`` padded by ``settle_time`` of zeros."""
    pad = int(np.ceil(settle_time / v.dt))
    vv = np.vstack([v.values, np.zeros((pad, v.n_channels))])
    rec = SignalRecord(vv, v.dt, v.t0)
    X = _forward(sir, vv, v.dt, None)
    u, y = simulate_sir(sir, rec)
    z = u.stack(y).values
    ev = float(np.sum(vv**2) * v.dt)
    ez = float(np.sum(z**2) * v.dt)
    xn = float(np.linalg.norm(X[-1]))
    bal = 0.0 if ev == 0 else abs(ev - ez) / ev
    return EnergyBalance(bal, ev, ez, xn < decay_tol, xn)


# --- LTI reduction --------------------------------------------------------------


def affine_from_lti(A, B, C, D):
    """The LTI plant as an AffineSystem with exact constant Jacobians."""
    A, B, C, D = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C, D))
    n, p = B.shape
    m = C.shape[0]
    return AffineSystem(
        n, p, m,
        a=lambda x: A @ x,
        B=lambda x: B,
        c=lambda x: C @ x,
        D=lambda x: D,
        da=lambda x: A,
        dB=lambda x: np.zeros((n, p, n)),
        dc=lambda x: C,
        dD=lambda x: np.zeros((m, p, n)),
    )


def sir_from_bundle(bundle, V_scale=1.0):
    """SIR of an LTI plant with the linear controller (g, V) = (Fx, V) of a factorization."""
    G = bundle.G
    base = affine_from_lti(G.A, G.B, G.C, G.D)
    F = np.asarray(bundle.F)
    V = V_scale * np.asarray(bundle.V)
    n, p = base.n, base.p
    return SirSystem(
        base,
        g=lambda x: F @ x,
        V=lambda x: V,
        dg=lambda x: F,
        dV=lambda x: np.zeros((p, p, n)),
    )


def quadratic_certificate(P, states):
    """Storage P(x) = x'Px/2 with gradient x'P."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return InnerCertificate(lambda x: 0.5 * x @ P @ x, lambda x: P @ x, states)


def check_jacobians(system, states, rtol=1e-4):
    """Worst relative gap between supplied Jacobians and central differences."""
    worst = 0.0
    for x in np.atleast_2d(states):
        for name in ("a", "B", "c", "D"):
            if getattr(system, "d" + name) is None:
                continue
            J = np.asarray(getattr(system, "d" + name)(x), dtype=float)
            Jfd = fd_jacobian(getattr(system, name), x)
            gap = np.linalg.norm(J - Jfd) / max(np.linalg.norm(Jfd), 1.0)
            worst = max(worst, gap)
    return worst


def interior_relative_error(a, b, skip):
    """||a - b|| / ||b|| over the record interior."""
    a = a.values if isinstance(a, SignalRecord) else np.asarray(a)
    b = b.values if isinstance(b, SignalRecord) else np.asarray(b)
    den = np.linalg.norm(interior(b, skip))
    num = np.linalg.norm(interior(a - b, skip))
    return num / den if den > 0 else num
