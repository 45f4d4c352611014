import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from innerae.lti import StateSpaceModel, adjoint_record, filter_record, normalized_rcf
from innerae.nlsir import (
    AffineSystem,
    DivergenceError,
    InnerCertificate,
    SirSystem,
    check_inner_conditions,
    check_jacobians,
    encode_adjoint,
    estimator_pi,
    interior_relative_error,
    quadratic_certificate,
    random_states,
    simulate_sir,
    sir_from_bundle,
    verify_lossless_energy,
)
from innerae.numlin import spectral_abscissa
from innerae.signals import SignalRecord, smooth_burst

SQ2 = math.sqrt(2)


@pytest.fixture(scope="module")
def first_order():
    return normalized_rcf(StateSpaceModel([[-1.0]], [[1.0]], [[1.0]], [[0.0]]))


def mimo_bundle(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    A -= (spectral_abscissa(A) + 1.0) * np.eye(3)
    G = StateSpaceModel(A, rng.normal(size=(3, 2)), rng.normal(size=(2, 3)), 0.3 * rng.normal(size=(2, 2)))
    return normalized_rcf(G)


def pendulum_like():
    """Small nonlinear plant with hand-written Jacobians."""

    def a(x):
        return np.array([-x[0] + 0.5 * math.sin(x[1]), -2.0 * x[1] + 0.3 * x[0] * x[1]])

    def da(x):
        return np.array([[-1.0, 0.5 * math.cos(x[1])], [0.3 * x[1], -2.0 + 0.3 * x[0]]])

    def B(x):
        return np.array([[1.0], [0.5 * math.cos(x[0])]])

    def dB(x):
        out = np.zeros((2, 1, 2))
        out[1, 0, 0] = -0.5 * math.sin(x[0])
        return out

    def c(x):
        return np.array([math.tanh(x[0]) + x[1]])

    def dc(x):
        return np.array([[1.0 - math.tanh(x[0]) ** 2, 1.0]])

    def D(x):
        return np.array([[0.1 * x[0]]])

    def dD(x):
        out = np.zeros((1, 1, 2))
        out[0, 0, 0] = 0.1
        return out

    return AffineSystem(2, 1, 1, a, B, c, D, da, dB, dc, dD)


def nonlinear_sir(jacobians=True):
    base = pendulum_like()
    if not jacobians:
        base = AffineSystem(base.n, base.p, base.m, base.a, base.B, base.c, base.D)
    return SirSystem(
        base,
        g=lambda x: np.array([-0.5 * x[0]]),
        V=lambda x: np.array([[1.0 / math.sqrt(1.0 + 0.01 * x[0] ** 2)]]),
        dg=(lambda x: np.array([[-0.5, 0.0]])) if jacobians else None,
        dV=(lambda x: np.array([[[-0.01 * x[0] / (1.0 + 0.01 * x[0] ** 2) ** 1.5, 0.0]]])) if jacobians else None,
    )


def test_zero_latent_stays_at_origin(first_order):
    sir = sir_from_bundle(first_order)
    u, y = simulate_sir(sir, SignalRecord(np.zeros((100, 1)), 0.01))
    assert not np.any(u.values) and not np.any(y.values)
    v = encode_adjoint(sir, SignalRecord(np.zeros((100, 2)), 0.01))
    assert not np.any(v.values)


def test_pulse_response(first_order):
    # a latent sample of 2/dt interpolated linearly to zero is a unit-area triangle on [0, dt]
    sir = sir_from_bundle(first_order)
    dt, N = 1e-3, 5000
    v = np.zeros(N)
    v[0] = 2 / dt
    _, y = simulate_sir(sir, SignalRecord(v, dt))
    a = SQ2
    t = dt * np.arange(N)
    exact = np.exp(-a * t) * (2 / dt) * (math.exp(a * dt) - 1 - a * dt) / (a * a * dt)
    assert np.max(np.abs(y.values[1:, 0] - exact[1:])) <= 1e-4


@pytest.mark.parametrize("seed", [0, 1])
def test_reduction_matches_lti(seed, first_order):
    b = first_order if seed == 0 else mimo_bundle(seed)
    sir = sir_from_bundle(b)
    dt = 0.005
    W = b.boundary_samples(dt)
    rng = np.random.default_rng(seed)
    v = smooth_burst(rng, 2 * W + 3000, b.n_inputs, dt, W, max_omega=1.0)
    u, y = simulate_sir(sir, v)
    z = filter_record(b.image, v)
    assert interior_relative_error(u.stack(y), z, 0) <= 1e-5

    va = encode_adjoint(sir, z)
    assert interior_relative_error(va, adjoint_record(b.image, z), W) <= 1e-4
    # inner: the adjoint recovers the latent
    assert interior_relative_error(va, v, W) <= 1e-3

    zhat = estimator_pi(sir, z)
    assert interior_relative_error(zhat, z, W) <= 1e-3
    zz = estimator_pi(sir, zhat)
    assert interior_relative_error(zz, zhat, W) <= 1e-3
    assert abs(va.norm() - zhat.norm()) <= 1e-3 * zhat.norm()


def test_inner_conditions_first_order(first_order):
    assert first_order.P[0, 0] == pytest.approx(SQ2 - 1, abs=1e-12)
    states = random_states([(-3, 3)], 100, seed=4)
    rep = check_inner_conditions(sir_from_bundle(first_order), quadratic_certificate(first_order.P, states))
    assert rep.worst() <= 1e-10
    scaled = check_inner_conditions(sir_from_bundle(first_order, 1.1), quadratic_certificate(first_order.P, states))
    assert scaled.max()["feedthrough"] == pytest.approx(0.21, abs=1e-12)


def test_inner_conditions_mimo():
    b = mimo_bundle(5)
    states = random_states([(-2, 2)] * 3, 50, seed=1)
    assert check_inner_conditions(sir_from_bundle(b), quadratic_certificate(b.P, states)).worst() <= 1e-8


def test_empty_grid(first_order):
    rep = check_inner_conditions(sir_from_bundle(first_order), quadratic_certificate(first_order.P, []))
    assert rep.empty and rep.max() == {} and rep.worst() == 0.0


def test_certificate_validation():
    with pytest.raises(ValueError):
        InnerCertificate(lambda x: 1.0 + x @ x, lambda x: 2 * x, np.ones((3, 1)))
    with pytest.raises(ValueError):
        InnerCertificate(lambda x: -(x @ x), lambda x: -2 * x, np.ones((3, 1)))


def test_lossless_energy(first_order):
    rng = np.random.default_rng(7)
    dt = 0.005
    v = smooth_burst(rng, 2000, 1, dt, 10)
    res = verify_lossless_energy(sir_from_bundle(first_order), v, settle_time=20.0)
    assert res.balance <= 1e-3 and res.settled
    res = verify_lossless_energy(sir_from_bundle(first_order, 1.1), v, settle_time=20.0)
    assert res.balance == pytest.approx(0.21, abs=1e-3)
    zero = verify_lossless_energy(sir_from_bundle(first_order), SignalRecord(np.zeros((10, 1)), dt), 1.0)
    assert zero.balance == 0.0
    short = verify_lossless_energy(sir_from_bundle(first_order), v, settle_time=0.1)
    assert not short.settled


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_jacobian_fidelity(seed):
    states = random_states([(-2, 2), (-2, 2)], 5, seed=seed)
    assert check_jacobians(pendulum_like(), states) <= 1e-4
    sir = nonlinear_sir()
    fd = nonlinear_sir(jacobians=False)
    rng = np.random.default_rng(seed)
    for x in states:
        v = rng.normal(size=1)
        np.testing.assert_allclose(sir.state_jacobian(x, v), fd.state_jacobian(x, v), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(sir.output_jacobian(x, v), fd.output_jacobian(x, v), rtol=1e-6, atol=1e-8)


def test_wrong_jacobian_is_flagged():
    base = pendulum_like()
    bad = AffineSystem(base.n, base.p, base.m, base.a, base.B, base.c, base.D, da=lambda x: np.eye(2))
    assert check_jacobians(bad, random_states([(-1, 1)] * 2, 3)) > 1e-2


def test_dimension_check():
    base = pendulum_like()
    base.check_dims(np.zeros(2))
    bad = AffineSystem(2, 1, 1, base.a, lambda x: np.ones((2, 2)), base.c, base.D)
    with pytest.raises(ValueError):
        bad.check_dims(np.zeros(2))


def test_nonlinear_adjoint_uses_supplied_or_fd_jacobians():
    rng = np.random.default_rng(3)
    dt = 0.01
    v = smooth_burst(rng, 1500, 1, dt, 100, max_omega=1.0)
    u, y = simulate_sir(nonlinear_sir(), SignalRecord(0.5 * v.values, dt))
    z = u.stack(y)
    va = encode_adjoint(nonlinear_sir(), z)
    vb = encode_adjoint(nonlinear_sir(jacobians=False), z)
    assert interior_relative_error(va, vb, 0) <= 1e-6


def test_divergence():
    base = AffineSystem(
        1, 1, 1,
        a=lambda x: 5.0 * x, B=lambda x: np.ones((1, 1)), c=lambda x: x, D=lambda x: np.zeros((1, 1)),
    )
    sir = SirSystem(base, g=lambda x: np.zeros(1), V=lambda x: np.eye(1), blowup=1e3)
    with pytest.raises(DivergenceError):
        simulate_sir(sir, SignalRecord(np.ones((1000, 1)), 0.01))


def test_channel_validation(first_order):
    sir = sir_from_bundle(first_order)
    with pytest.raises(ValueError):
        simulate_sir(sir, SignalRecord(np.zeros((5, 2)), 0.1))
    with pytest.raises(ValueError):
        encode_adjoint(sir, SignalRecord(np.zeros((5, 1)), 0.1))
