"""Normalized coprime factorizations and the orthogonal projection onto the image subspace.

For a plant G = (A, B, C, D) the normalized stable image representation is

    I_G0 = [M0; N0] = (A + BF, BV, [F; C + DF], [V; DV]),

with F, V from the Riccati solution, and the normalized stable kernel
representation K_G0 = [-Nhat0, Mhat0] comes from the dual Riccati problem.
Together they form the unitary map [I_G0~; K_G0].

Sampled records are filtered with the bilinear (trapezoidal) discretization
of these realizations. The bilinear map sends the imaginary axis onto the unit
circle, so every algebraic identity of the continuous factors (normalization,
K_G0 I_G0 = 0, unitarity) holds exactly for the discrete operators; only the
record boundaries introduce error.
"""
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .numlin import CareProblem, NumericalError, as_matrix, solve_care
from .signals import SignalRecord, interior

BOUNDARY_TIME_CONSTANTS = 5


@dataclass(frozen=True)
class StateSpaceModel:
    """Realization (A, B, C, D); ``dt`` is None for continuous time, else the sampling period."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float | None = None

    def __post_init__(self):
        D = as_matrix(self.D, name="D")
        m, p = D.shape
        A = as_matrix(self.A, name="A") if np.size(self.A) else np.zeros((0, 0))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = as_matrix(self.B, n, p, name="B") if n else np.zeros((0, p))
        C = as_matrix(self.C, m, n, name="C") if n else np.zeros((m, 0))
        if self.dt is not None and not self.dt > 0:
            raise ValueError("sampling period must be positive")
        for name, value in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, value)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.D.shape[1]

    @property
    def n_outputs(self):
        return self.D.shape[0]

    @property
    def is_discrete(self):
        return self.dt is not None

    def transpose(self):
        """Realization of the transposed transfer matrix G(s)'."""
        return StateSpaceModel(self.A.T, self.C.T, self.B.T, self.D.T, self.dt)

    def poles(self):
        return np.linalg.eigvals(self.A) if self.n_states else np.zeros(0)


def freq_response(sys: StateSpaceModel, omega):
    """Transfer matrix at s = j*omega (continuous) or z = exp(j*omega*dt) (discrete).

    ``omega`` is in rad/s in both cases.
    """
    if np.isinf(omega):
        if sys.is_discrete:
            raise ValueError("infinite frequency is undefined for a discrete model")
        return sys.D.astype(complex)
    s = np.exp(1j * omega * sys.dt) if sys.is_discrete else 1j * omega
    n = sys.n_states
    if n == 0:
        return sys.D.astype(complex)
    resolvent = s * np.eye(n) - sys.A
    if np.linalg.cond(resolvent) > 1e14:
        raise NumericalError(f"resolvent is singular at omega={omega}")
    return sys.C @ np.linalg.solve(resolvent, sys.B) + sys.D


def _sym_inv_sqrt(R):
    w, U = np.linalg.eigh(R)
    return (U / np.sqrt(w)) @ U.T


@dataclass(frozen=True)
class FactorizationBundle:
    """Normalized right/left coprime factors of a plant and the data that built them."""

    G: StateSpaceModel
    F: np.ndarray
    V: np.ndarray
    L: np.ndarray
    W: np.ndarray
    P: np.ndarray
    P_dual: np.ndarray
    M0: StateSpaceModel
    N0: StateSpaceModel
    Nhat0: StateSpaceModel
    Mhat0: StateSpaceModel

    @property
    def image(self) -> StateSpaceModel:
        """I_G0 = [M0; N0], latent v -> (u; y)."""
        return StateSpaceModel(
            self.M0.A, self.M0.B, np.vstack([self.M0.C, self.N0.C]), np.vstack([self.M0.D, self.N0.D])
        )

    @property
    def kernel(self) -> StateSpaceModel:
        """K_G0 = [-Nhat0, Mhat0], (u; y) -> residual."""
        return StateSpaceModel(
            self.Mhat0.A,
            np.hstack([-self.Nhat0.B, self.Mhat0.B]),
            self.Mhat0.C,
            np.hstack([-self.Nhat0.D, self.Mhat0.D]),
        )

    @property
    def n_inputs(self):
        return self.G.n_inputs

    @property
    def n_outputs(self):
        return self.G.n_outputs

    def boundary_samples(self, dt):
        """Samples to ignore at each record end: five slowest time constants of the factors."""
        poles = np.concatenate([self.M0.poles(), self.Mhat0.poles()])
        if poles.size == 0:
            return 0
        tau = 1.0 / np.min(np.abs(poles.real))
        return int(math.ceil(BOUNDARY_TIME_CONSTANTS * tau / dt))


def assemble_bundle(G, F, V, L, W, P=None, P_dual=None):
    """Build factor realizations from given gains (no normalization is implied)."""
    A, B, C, D = G.A, G.B, G.C, G.D
    n = G.n_states
    P = np.zeros((n, n)) if P is None else P
    P_dual = np.zeros((n, n)) if P_dual is None else P_dual
    Ar = A + B @ F
    M0 = StateSpaceModel(Ar, B @ V, F, V)
    N0 = StateSpaceModel(Ar, B @ V, C + D @ F, D @ V)
    Al = A + L @ C
    Mhat0 = StateSpaceModel(Al, L, W @ C, W)
    Nhat0 = StateSpaceModel(Al, B + L @ D, W @ C, W @ D)
    return FactorizationBundle(G, F, V, L, W, P, P_dual, M0, N0, Nhat0, Mhat0)


def normalized_rcf(G: StateSpaceModel) -> FactorizationBundle:
    """Normalized SIR (M0, N0) and SKR (-Nhat0, Mhat0) of a continuous-time plant."""
    if G.is_discrete:
        raise ValueError("normalized_rcf expects a continuous-time model")
    n, p, m = G.n_states, G.n_inputs, G.n_outputs
    V = _sym_inv_sqrt(np.eye(p) + G.D.T @ G.D)
    W = _sym_inv_sqrt(np.eye(m) + G.D @ G.D.T)
    if n == 0:
        return assemble_bundle(G, np.zeros((p, 0)), V, np.zeros((0, m)), W)
    prob = CareProblem(G.A, G.B, G.C, G.D)
    P = solve_care(prob)
    F = prob.gain(P)
    dual = prob.dual()
    P_dual = solve_care(dual)
    L = dual.gain(P_dual).T
    return assemble_bundle(G, F, V, L, W, P, P_dual)


def unitary_deviation(bundle: FactorizationBundle, omega):
    """|| [I_G0~; K_G0] [I_G0, K_G0~] - I ||_2 at one frequency."""
    Ig = freq_response(bundle.image, omega)
    Kg = freq_response(bundle.kernel, omega)
    U = np.vstack([Ig.conj().T, Kg])
    return float(np.linalg.norm(U @ U.conj().T - np.eye(U.shape[0]), 2))


def verify_normalization(bundle: FactorizationBundle, grid):
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("frequency grid is empty")
    return max(unitary_deviation(bundle, w) for w in grid)


# --- sampled-data filtering ------------------------------------------------


def bilinear(sys: StateSpaceModel, dt):
    """Bilinear (Tustin) discretization, equal to trapezoidal integration of the state equation.

    Uses the symmetric sqrt(dt) scaling of input and output maps, which keeps
    the Gramians of the discrete realization equal to those of the continuous one.
    """
    if sys.is_discrete:
        raise ValueError("model is already discrete")
    n = sys.n_states
    if n == 0:
        return StateSpaceModel(np.zeros((0, 0)), np.zeros((0, sys.n_inputs)), np.zeros((sys.n_outputs, 0)), sys.D, dt)
    I = np.eye(n)
    E = np.linalg.inv(I - 0.5 * dt * sys.A)
    Ad = E @ (I + 0.5 * dt * sys.A)
    Bd = math.sqrt(dt) * E @ sys.B
    Cd = math.sqrt(dt) * sys.C @ E
    Dd = sys.D + 0.5 * dt * sys.C @ E @ sys.B
    return StateSpaceModel(Ad, Bd, Cd, Dd, dt)


def dlsim(sysd: StateSpaceModel, u, x0=None):
    """Causal response of a discrete realization to inputs ``u`` (samples, inputs).

    Returns the outputs and the state after the last sample.
    """
    u = np.asarray(u, dtype=float)
    N = u.shape[0]
    n = sysd.n_states
    y = u @ sysd.D.T
    if n == 0:
        return y, np.zeros(0)
    bu = u @ sysd.B.T
    X = np.empty((N, n))
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    A = sysd.A
    for k in range(N):
        X[k] = x
        x = A @ x + bu[k]
    y += X @ sysd.C.T
    return y, x


def dlsim_adjoint(sysd: StateSpaceModel, y):
    """Exact l2 adjoint of :func:`dlsim` on the record, for inputs that vanish after it.

    Time-reverses ``y``, runs the transposed realization and reverses back.
    Returns the adjoint output and the backward state at the first sample,
    which carries everything the adjoint emits before the record starts.
    """
    y = np.asarray(y, dtype=float)
    N = y.shape[0]
    n = sysd.n_states
    v = y @ sysd.D
    if n == 0:
        return v, np.zeros(0)
    cy = y @ sysd.C
    At = sysd.A.T
    Xi = np.empty((N, n))
    xi = np.zeros(n)
    # Xi[k] = xi_{k+1}: contribution of y_j for j > k
    for k in range(N - 1, -1, -1):
        Xi[k] = xi
        xi = At @ xi + cy[k]
    v += Xi @ sysd.B
    return v, xi


def controllability_gramian(sysd: StateSpaceModel):
    if sysd.n_states == 0:
        return np.zeros((0, 0))
    Wc = scipy.linalg.solve_discrete_lyapunov(sysd.A, sysd.B @ sysd.B.T)
    return 0.5 * (Wc + Wc.T)


def filter_record(sys: StateSpaceModel, rec: SignalRecord):
    """Apply a continuous-time system to a sampled record (zero initial state)."""
    if rec.n_channels != sys.n_inputs:
        raise ValueError(f"record has {rec.n_channels} channels, system expects {sys.n_inputs}")
    y, _ = dlsim(bilinear(sys, rec.dt), rec.values)
    return SignalRecord(y, rec.dt, rec.t0)


def adjoint_record(sys: StateSpaceModel, rec: SignalRecord):
    """Apply the anticausal conjugate system sys~ to a sampled record."""
    if rec.n_channels != sys.n_outputs:
        raise ValueError(f"record has {rec.n_channels} channels, adjoint expects {sys.n_outputs}")
    v, _ = dlsim_adjoint(bilinear(sys, rec.dt), rec.values)
    return SignalRecord(v, rec.dt, rec.t0)


def _check_stacked(bundle, z):
    p, m = bundle.n_inputs, bundle.n_outputs
    if z.n_channels != p + m:
        raise ValueError(f"expected {p + m} stacked (u; y) channels, got {z.n_channels}")


def project_onto_image(bundle: FactorizationBundle, z: SignalRecord):
    """Orthogonal projection of the record (u; y) onto the image subspace.

    Returns ``(zhat, v)`` with latent ``v = I_G0~ z`` and ``zhat = I_G0 v``. The
    record is treated as a signal that is zero outside its horizon: the part of
    ``v`` that the anticausal adjoint emits before the first sample enters
    ``zhat`` exactly through the initial state ``Wc xi0`` (controllability
    Gramian times the backward state). Only the loss of ``zhat``'s tail past
    the last sample remains, hence the boundary window.
    """
    _check_stacked(bundle, z)
    Id = bilinear(bundle.image, z.dt)
    v, xi0 = dlsim_adjoint(Id, z.values)
    x0 = controllability_gramian(Id) @ xi0
    zhat, _ = dlsim(Id, v, x0)
    return SignalRecord(zhat, z.dt, z.t0), SignalRecord(v, z.dt, z.t0)


def skr_residual(bundle: FactorizationBundle, u: SignalRecord, y: SignalRecord):
    """Residual r = Mhat0 y - Nhat0 u."""
    if u.n_channels != bundle.n_inputs or y.n_channels != bundle.n_outputs:
        raise ValueError(
            f"expected {bundle.n_inputs} input and {bundle.n_outputs} output channels, "
            f"got {u.n_channels} and {y.n_channels}"
        )
    return filter_record(bundle.kernel, u.stack(y))


def distance_to_image(bundle: FactorizationBundle, z: SignalRecord, skip=None):
    """||z - P z||_2 over the record interior (``skip`` defaults to the boundary window)."""
    zhat, _ = project_onto_image(bundle, z)
    skip = bundle.boundary_samples(z.dt) if skip is None else skip
    return float(np.linalg.norm(interior(z.values - zhat.values, skip)))


def with_gains(bundle: FactorizationBundle, **gains):
    """Rebuild the factor realizations after overriding some of F, V, L, W."""
    b = replace(bundle, **gains)
    return assemble_bundle(b.G, b.F, b.V, b.L, b.W, b.P, b.P_dual)
