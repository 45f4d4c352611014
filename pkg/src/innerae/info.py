"""Spectral estimates and Gaussian information rates.

Spectral density matrices use the convention Phi_xy(theta) = E[X(theta) Y(theta)^H]
on a two-sided grid, scaled so that white noise of covariance S has Phi = S.
Rates are in nats per sample.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .lti import FactorizationBundle, bilinear, dlsim, dlsim_adjoint
from .numlin import NumericalError
from .signals import SignalRecord

REG_EPS = 1e-10
MI_FLOOR = -0.02  # estimated MI rates below this are flagged as estimator failure


@dataclass
class SpectralEstimate:
    theta: np.ndarray  # (K,) uniform grid on [-pi, pi)
    Phi: np.ndarray  # (K, c, c) Hermitian
    segment: int
    overlap: float
    n_segments: int

    @property
    def n_channels(self):
        return self.Phi.shape[1]

    def block(self, rows, cols=None):
        cols = rows if cols is None else cols
        return self.Phi[:, rows][:, :, cols]

    def band_average(self, n_bands=8):
        """Mean of Phi over ``n_bands`` contiguous frequency bands, shape (n_bands, c, c)."""
        return np.stack([b.mean(axis=0) for b in np.array_split(self.Phi, n_bands)])


def estimate_psd(record, segment=1024, overlap=0.5, detrend=False):
    """Averaged Hann-windowed periodogram of a multichannel record.

    ``record`` is a SignalRecord or an array of shape (samples, channels).
    """
    x = record.values if isinstance(record, SignalRecord) else np.asarray(record, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    N, c = x.shape
    if N < 4 * segment:
        raise ValueError(f"record of {N} samples is shorter than 4 segments of {segment}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    step = segment - int(round(overlap * segment))
    starts = np.arange(0, N - segment + 1, step)
    w = np.hanning(segment + 1)[:-1]  # periodic Hann
    segs = np.stack([x[s : s + segment] for s in starts])  # (S, segment, c)
    if detrend:
        segs = segs - segs.mean(axis=1, keepdims=True)
    X = np.fft.fft(segs * w[None, :, None], axis=1)  # (S, K, c)
    Phi = np.einsum("ski,skj->kij", X, X.conj()) / (len(starts) * np.sum(w * w))
    Phi = 0.5 * (Phi + Phi.conj().transpose(0, 2, 1))
    theta = 2 * np.pi * np.fft.fftfreq(segment)
    order = np.argsort(theta)
    return SpectralEstimate(theta[order], Phi[order], segment, overlap, len(starts))


def _integrate(theta, f):
    """Trapezoid over [-pi, pi] on a periodic uniform grid."""
    return np.trapezoid(np.append(f, f[0]), np.append(theta, np.pi))


def _logdet(Phi, rank=None, eps=REG_EPS):
    """log det per grid point; with ``rank`` the sum of the ``rank`` largest eigenvalue logs.

    Full-rank densities get ``eps`` added to every eigenvalue; an eigenvalue
    that the regularization would at least double counts as singular.
    """
    lam = np.linalg.eigvalsh(Phi)  # ascending
    if rank is not None:
        lam = lam[:, lam.shape[1] - rank :]
        floor = 0.0
    else:
        floor = eps
    if np.any(lam <= floor):
        raise NumericalError("spectral density is singular on the grid")
    return np.sum(np.log(lam + floor), axis=1)


def _principal(Phi, rank):
    """Basis (K, c, rank) of the dominant eigenspace at each grid point."""
    _, U = np.linalg.eigh(Phi)
    return U[:, :, U.shape[2] - rank :]


def entropy_rate(est: SpectralEstimate, n=None, rank=None):
    """Entropy rate of a Gaussian process from its spectral density.

    For a process confined to a ``rank``-dimensional subspace at each
    frequency, the pseudo-determinant and that dimension are used.
    """
    n = est.n_channels if n is None else n
    if n != est.n_channels:
        raise ValueError(f"estimate has {est.n_channels} channels, expected {n}")
    d = n if rank is None else rank
    ld = _logdet(est.Phi, rank)
    return 0.5 * d * math.log(2 * math.pi * math.e) + _integrate(est.theta, ld) / (4 * math.pi)


def mi_rate(est: SpectralEstimate, n, m, rank_x=None, rank_y=None):
    """Mutual information rate between the first ``n`` and the last ``m`` channels.

    ``rank_x`` / ``rank_y`` restrict a rank-deficient component to its dominant
    eigenspace at each frequency before the determinant ratio is taken.
    """
    if n + m != est.n_channels:
        raise ValueError(f"estimate has {est.n_channels} channels, expected {n} + {m}")
    Phi = est.Phi
    ix, iy = np.arange(n), np.arange(n, n + m)
    parts = []
    for idx, r in ((ix, rank_x), (iy, rank_y)):
        blk = Phi[:, idx][:, :, idx]
        parts.append(_principal(blk, r) if r is not None else np.broadcast_to(np.eye(len(idx)), (len(Phi), len(idx), len(idx))))
    K = len(Phi)
    rx, ry = parts[0].shape[2], parts[1].shape[2]
    T = np.zeros((K, n + m, rx + ry), dtype=complex)
    T[:, :n, :rx] = parts[0]
    T[:, n:, rx:] = parts[1]
    R = T.conj().transpose(0, 2, 1) @ Phi @ T
    R = 0.5 * (R + R.conj().transpose(0, 2, 1))
    f = _logdet(R[:, :rx, :rx]) + _logdet(R[:, rx:, rx:]) - _logdet(R)
    return _integrate(est.theta, f) / (4 * math.pi)


# --- minimal sufficiency of the latent ------------------------------------------


@dataclass
class Theorem1Report:
    mi_rate: float | None
    H_v: float | None
    H_zhat: float | None
    rel_gap: float | None
    cross_band_max: float | None
    degenerate: bool
    discretization: str
    n_samples: int
    tolerances: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.checks) and all(self.checks.values())

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def latent_channel(bundle: FactorizationBundle, vbar, q, xi, dt=1.0):
    """Signals of the latent channel on a discrete grid.

    (u; y) = I vbar + K~ q and v = I~ (u; y) + xi, zhat = I v, with I the
    image and K the kernel factor discretized bilinearly at ``dt``. Returns
    (uy, v, zhat, Itq) where Itq = I~ K~ q is the part of v due to q.
    """
    Id = bilinear(bundle.image, dt)
    Kd = bilinear(bundle.kernel, dt)
    Ktq, _ = dlsim_adjoint(Kd, q)
    uy = dlsim(Id, vbar)[0] + Ktq
    v = dlsim_adjoint(Id, uy)[0] + xi
    zhat = dlsim(Id, v)[0]
    Itq = dlsim_adjoint(Id, Ktq)[0]
    return uy, v, zhat, Itq


def verify_theorem1(bundle: FactorizationBundle, vbar=None, sigma_q=1.0, sigma_xi=1.0, n_samples=2**16, dt=1.0,
                     seed=0, segment=1024, mi_tol=0.05, h_tol=0.05, cross_tol=0.05):
    """Check that the latent is independent of the kernel-side uncertainty.

    The deterministic part is removed by running the channel once without
    noise; rates are computed on the fluctuations. With no noise at all the
    report is flagged degenerate and no rates are formed.
    """
    m, p = bundle.n_inputs, bundle.n_outputs
    pm = m + p
    t = np.arange(n_samples) * dt
    if vbar is None:
        vbar = np.column_stack([np.sin(0.05 * (k + 1) * t) for k in range(m)])
    vbar = np.asarray(vbar, dtype=float).reshape(n_samples, m)
    rng = np.random.default_rng(seed)
    q = sigma_q * rng.normal(size=(n_samples, p))
    xi = sigma_xi * rng.normal(size=(n_samples, m))
    uy, v, zhat, Itq = latent_channel(bundle, vbar, q, xi, dt)
    uy0, v0, zhat0, _ = latent_channel(bundle, vbar, np.zeros_like(q), np.zeros_like(xi), dt)
    duy, dv, dz = uy - uy0, v - v0, zhat - zhat0
    tol = {"mi": mi_tol, "entropy_rel": h_tol, "cross": cross_tol}
    disc = f"bilinear, dt={dt}"
    if sigma_xi == 0:
        # v carries no fluctuation
        return Theorem1Report(None, None, None, None, None, True, disc, n_samples, tol, {})

    est_j = estimate_psd(np.hstack([duy, dv]), segment)
    rank_uy = p if sigma_q > 0 else None
    if sigma_q == 0:
        mi = 0.0
    else:
        mi = mi_rate(est_j, pm, m, rank_x=rank_uy)
    H_v = entropy_rate(estimate_psd(dv, segment))
    H_z = entropy_rate(estimate_psd(dz, segment), rank=m)
    rel = abs(H_v - H_z) / abs(H_v)
    cross = 0.0
    if sigma_q > 0:
        est_c = estimate_psd(np.hstack([Itq, q]), segment)
        cross = float(np.max(np.abs(est_c.band_average()[:, :m, m:])))
    checks = {
        "mi": bool(abs(mi) <= mi_tol),
        "mi_nonnegative": bool(mi >= MI_FLOOR),
        "entropy": bool(rel <= h_tol),
        "cross": bool(cross <= cross_tol),
    }
    return Theorem1Report(float(mi), float(H_v), float(H_z), float(rel), cross, False, disc, n_samples, tol, checks)
