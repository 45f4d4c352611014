import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from innerae.detect import (
    DetectorConfig,
    calibrate_threshold,
    campaign_episodes,
    compute_metrics,
    decide,
    evaluate_J,
    evaluate_windows,
    j_statistic,
    quantile_type1,
    run_campaign,
    sliding_windows,
    window_labels,
)
from innerae.tts import FaultSpec, TtsParams


class ShiftModel:
    """Stand-in reconstructor: identity normalization, decode adds a fixed offset."""

    def __init__(self, offset):
        self.offset = np.asarray(offset, dtype=float)

    def normalize(self, z):
        return np.asarray(z, dtype=float)

    def encode(self, zn):
        return zn

    def decode(self, v):
        return v + self.offset


def test_config_validation():
    DetectorConfig()
    for bad in (dict(window=0), dict(gamma=0.0), dict(gamma=1.0), dict(J_th=-1.0)):
        with pytest.raises(ValueError):
            DetectorConfig(**bad)


def test_perfect_reconstruction_gives_zero():
    z = np.random.default_rng(0).normal(size=(100, 4))
    assert evaluate_J(ShiftModel(np.zeros(4)), z) == 0.0


def test_constant_error_gives_window_times_norm():
    e = np.array([0.3, -1.2, 0.5, 2.0])
    z = np.random.default_rng(1).normal(size=(100, 4))
    assert evaluate_J(ShiftModel(e), z, length=100) == pytest.approx(100 * e @ e, rel=1e-12)


def test_length_mismatch():
    with pytest.raises(ValueError):
        evaluate_J(ShiftModel(np.zeros(4)), np.zeros((50, 4)), length=100)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_J_invariant_to_sample_permutation(seed):
    rng = np.random.default_rng(seed)
    z, zhat = rng.normal(size=(2, 100, 4))
    perm = rng.permutation(100)
    assert j_statistic(z[perm], zhat[perm]) == pytest.approx(j_statistic(z, zhat), rel=1e-12)


def test_sliding_windows_match_loop():
    z = np.arange(30.0).reshape(10, 3)
    w = sliding_windows(z, 4)
    assert w.shape == (7, 4, 3)
    for k in range(7):
        np.testing.assert_array_equal(w[k], z[k : k + 4])
    J = evaluate_windows(ShiftModel(np.ones(3)), z, window=4)
    np.testing.assert_allclose(J, 12.0)


def test_window_labels_half_rule():
    flags = np.r_[np.zeros(10), np.ones(10)]
    lab = window_labels(flags, window=4)
    # window k covers samples k..k+3; faulty once at least 2 of them are post-injection
    np.testing.assert_array_equal(lab, np.arange(17) >= 8)


def test_threshold_examples():
    assert calibrate_threshold(np.zeros(2000), 0.05) == 0.0
    with pytest.warns(UserWarning):
        assert calibrate_threshold(np.arange(1, 101), 0.05) == 95
    with pytest.raises(ValueError):
        calibrate_threshold([], 0.05)


def test_threshold_no_warning_with_enough_windows():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        calibrate_threshold(np.random.default_rng(0).random(2000), 0.05)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_quantile_monotone_and_type1(seed, q1, q2):
    v = np.random.default_rng(seed).normal(size=257)
    lo, hi = sorted((q1, q2))
    assert quantile_type1(v, lo) <= quantile_type1(v, hi)
    x = quantile_type1(v, hi)
    # smallest sample with empirical CDF at least q
    assert np.mean(v <= x) >= hi - 1e-12
    assert np.mean(v < x) < hi


def test_decide():
    assert decide(0.5, 0.2)
    assert not decide(0.2, 0.2)
    assert not decide(0.0, 0.2)


def test_metrics_hand_example():
    labels = np.r_[np.ones(100, bool), np.zeros(100, bool)]
    dec = labels.copy()
    dec[:10] = False  # 10 missed detections
    dec[100:105] = True  # 5 false alarms
    m = compute_metrics(dec, labels)
    assert (m.N, m.N_F, m.N_FF, m.N_FA, m.N_MD) == (200, 100, 100, 5, 10)
    assert abs(m.FAR - 0.05) <= 1e-12
    assert abs(m.MDR - 0.10) <= 1e-12
    assert abs(m.accuracy - 0.925) <= 1e-12
    assert abs(m.F1 - 90 / 97.5) <= 1e-12


def test_metrics_perfect_and_undefined():
    labels = np.r_[np.ones(5, bool), np.zeros(5, bool)]
    m = compute_metrics(labels, labels)
    assert (m.FAR, m.MDR, m.accuracy, m.F1) == (0.0, 0.0, 1.0, 1.0)
    m = compute_metrics(np.zeros(4, bool), np.zeros(4, bool))
    assert m.MDR is None and m.FAR == 0.0
    with pytest.raises(ValueError):
        compute_metrics(np.zeros(3, bool), np.zeros(4, bool))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=200))
def test_metric_identities(pairs):
    dec, lab = map(np.array, zip(*pairs))
    m = compute_metrics(dec, lab)
    assert m.N == m.N_F + m.N_FF
    tp = np.sum(dec & lab)
    tn = np.sum(~dec & ~lab)
    assert m.accuracy == pytest.approx((tp + tn) / m.N, abs=1e-12)
    for v in (m.FAR, m.MDR, m.accuracy, m.F1):
        assert v is None or 0.0 <= v <= 1.0
    if m.F1 is not None:
        assert m.F1 == pytest.approx(2 * tp / (2 * tp + m.N_FA + m.N_MD), abs=1e-12)


@pytest.fixture(scope="module")
def sensor_runs():
    return campaign_episodes(TtsParams(), FaultSpec.sensor_gain(), 2, seed=3)


def test_campaign_without_fault_has_undefined_mdr():
    model = ShiftModel(np.zeros(4))
    rep = run_campaign(model, TtsParams(), FaultSpec(), 1, seed=0, J_th=0.0)
    s = rep.summary()
    assert s["MDR"]["mean"] is None
    assert s["FAR"]["mean"] == 0.0


def test_campaign_is_deterministic(sensor_runs, tmp_path):
    class Level:
        """J is the window energy, which moves with the fault."""

        def normalize(self, z):
            return z

        def encode(self, zn):
            return zn

        def decode(self, v):
            return np.zeros_like(v)

    again = campaign_episodes(TtsParams(), FaultSpec.sensor_gain(), 2, seed=3)
    for a, b in zip(sensor_runs, again):
        np.testing.assert_array_equal(a.z, b.z)
    r1 = run_campaign(Level(), TtsParams(), FaultSpec.sensor_gain(), 2, 3, J_th=1e5, episodes=sensor_runs)
    r2 = run_campaign(Level(), TtsParams(), FaultSpec.sensor_gain(), 2, 3, J_th=1e5, episodes=again)
    assert json.dumps(r1.to_dict()) == json.dumps(r2.to_dict())
    run = r1.runs[0]
    assert len(run.J) == 800 - 99
    # window ending at t has label faulty once >= 50 samples are at or after 401
    assert run.label.sum() == 800 - 450 + 1
    r1.windows_to_csv(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "run,t,J,J_th,decision,label"
    assert len(lines) == 1 + 2 * 701
