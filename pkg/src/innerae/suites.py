"""Analytic verification suites behind ``innerae verify``."""
import math
import time
from dataclasses import dataclass

import numpy as np

from .info import verify_theorem1
from .lti import (
    StateSpaceModel,
    adjoint_record,
    filter_record,
    normalized_rcf,
    project_onto_image,
    skr_residual,
    verify_normalization,
)
from .nlsir import (
    check_inner_conditions,
    encode_adjoint,
    interior_relative_error,
    quadratic_certificate,
    random_states,
    simulate_sir,
    sir_from_bundle,
    verify_lossless_energy,
)
from .numlin import CareProblem, solve_care, spectral_abscissa
from .signals import SignalRecord, interior, smooth_burst

GRID = np.logspace(-2, 2, 200)


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool = None

    def __post_init__(self):
        if self.passed is None:
            self.passed = bool(self.value <= self.tol)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3g} (tol {self.tol:g})"


def first_order():
    return StateSpaceModel([[-1.0]], [[1.0]], [[1.0]], [[0.0]])


def random_plant(rng, n, p, m):
    A = rng.normal(size=(n, n))
    A -= (spectral_abscissa(A) + rng.uniform(0.5, 2.0)) * np.eye(n)
    return StateSpaceModel(A, rng.normal(size=(n, p)), rng.normal(size=(m, n)), rng.normal(size=(m, p)))


def _rel(a, b, skip):
    return np.linalg.norm(interior(a - b, skip)) / np.linalg.norm(interior(b, skip))


def projection_errors(seed, dt=0.02, support=800):
    """Worst interior relative errors of the projection identities on one random signal."""
    rng = np.random.default_rng(seed)
    n, p, m = (int(rng.integers(1, k)) for k in (5, 3, 3))
    b = normalized_rcf(random_plant(rng, n, p, m))
    W = b.boundary_samples(dt)
    margin = 3 * W
    N = 2 * margin + support
    z_im = filter_record(b.image, smooth_burst(rng, N, p, dt, margin))
    z_perp = adjoint_record(b.kernel, smooth_burst(rng, N, m, dt, margin))
    z = SignalRecord(z_im.values + z_perp.values, dt)
    zhat, v = project_onto_image(b, z)
    zz, _ = project_onto_image(b, zhat)
    zi, _ = project_onto_image(b, z_im)
    r = skr_residual(b, z_im.channels(slice(0, p)), z_im.channels(slice(p, None)))
    nz2 = z.norm(W) ** 2
    split = zhat.norm(W) ** 2 + np.linalg.norm(interior(z.values - zhat.values, W)) ** 2
    return {
        "idempotency": _rel(zz.values, zhat.values, W),
        "lossless": abs(v.norm() - zhat.norm()) / zhat.norm(),
        "energy_split": abs(split - nz2) / nz2,
        "image_fixed": _rel(zi.values, z_im.values, W),
        "image_residual": r.norm(W) / z_im.norm(W),
    }


def suite_lti(n_systems=50, n_signals=20, seed=0):
    t0 = time.perf_counter()
    P = solve_care(CareProblem(-1.0, 1.0, 1.0, 0.0))
    checks = [Check("care_first_order", abs(P[0, 0] - (math.sqrt(2) - 1)), 1e-10)]
    rng = np.random.default_rng(seed)
    dev = 0.0
    for _ in range(n_systems):
        n, p, m = int(rng.integers(1, 7)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        dev = max(dev, verify_normalization(normalized_rcf(random_plant(rng, n, p, m)), GRID))
    checks.append(Check(f"normalization_{n_systems}_systems", dev, 1e-7))
    worst = {}
    for s in range(n_signals):
        for k, e in projection_errors(seed + s).items():
            worst[k] = max(worst.get(k, 0.0), e)
    checks += [Check(f"projection_{k}", e, 1e-6) for k, e in worst.items()]
    return checks, time.perf_counter() - t0


def suite_inner(seed=0):
    t0 = time.perf_counter()
    b = normalized_rcf(first_order())
    sir = sir_from_bundle(b)
    states = random_states([(-3, 3)], 100, seed=seed)
    checks = [Check("inner_conditions", check_inner_conditions(sir, quadratic_certificate(b.P, states)).worst(), 1e-8)]
    dt = 0.005
    W = b.boundary_samples(dt)
    rng = np.random.default_rng(seed)
    v = smooth_burst(rng, 2 * W + 3000, b.n_inputs, dt, W, max_omega=1.0)
    u, y = simulate_sir(sir, v)
    z = filter_record(b.image, v)
    checks.append(Check("reduction_forward", interior_relative_error(u.stack(y), z, 0), 1e-3))
    checks.append(Check("reduction_adjoint", interior_relative_error(encode_adjoint(sir, z), adjoint_record(b.image, z), W), 1e-3))
    vb = smooth_burst(rng, 2000, 1, dt, 10)
    checks.append(Check("lossless_energy", verify_lossless_energy(sir, vb, settle_time=20.0).balance, 1e-3))
    return checks, time.perf_counter() - t0


def suite_info(n_samples=2**16, seed=0):
    t0 = time.perf_counter()
    rep = verify_theorem1(normalized_rcf(first_order()), n_samples=n_samples, seed=seed)
    checks = [
        Check("mi_rate", abs(rep.mi_rate), rep.tolerances["mi"]),
        Check("entropy_rel_gap", rep.rel_gap, rep.tolerances["entropy_rel"]),
        Check("cross_spectrum", rep.cross_band_max, rep.tolerances["cross"]),
        Check("mi_nonnegative", max(-rep.mi_rate, 0.0), 0.02),
    ]
    return checks, time.perf_counter() - t0


SUITES = {"lti": suite_lti, "inner": suite_inner, "info": suite_info}
