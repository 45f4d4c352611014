import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from innerae.iae import (
    HISTORY_COLUMNS,
    AEModel,
    TrainConfig,
    TrainingDivergence,
    check_weights,
    combine,
    loss_and_grad,
    loss_L1,
    loss_L2,
    loss_L3,
    loss_L4,
    total_loss,
    train,
)
from innerae.tts import TtsParams, build_dataset


class LinearStub:
    """encode = identity, decode(v) = alpha * v + shift; identity standardization."""

    n_channels = 3

    def __init__(self, alpha=1.0, shift=0.0):
        self.alpha = alpha
        self.shift = np.asarray(shift, dtype=float)

    def normalize(self, z):
        return np.asarray(z, dtype=float)

    def encode(self, zn):
        return zn

    def decode(self, v):
        return self.alpha * v + self.shift


@pytest.fixture(scope="module")
def batch():
    return np.random.default_rng(0).normal(size=(5, 20, 3))


@pytest.fixture(scope="module")
def small_model():
    return AEModel.create(n_channels=3, d_v=2, hidden=(3, 2), seed=4, mean=[0.1, -0.2, 0.3], std=[1.5, 0.5, 2.0])


def test_L1_constant_error(batch):
    e = np.array([0.3, -0.4, 1.2])
    eps2 = e @ e
    assert loss_L1(LinearStub(shift=e), batch) == pytest.approx(20 * eps2, rel=1e-12)
    assert loss_L1(LinearStub(), batch) == 0.0


def test_L1_duplication_invariance(small_model, batch):
    assert loss_L1(small_model, np.concatenate([batch, batch])) == pytest.approx(loss_L1(small_model, batch), rel=1e-12)


@pytest.mark.parametrize("alpha", [0.5, 0.9, 1.3])
def test_L2_linear_scaling(alpha, batch):
    expected = (alpha**2 - alpha) ** 2 * np.sum(batch**2) / len(batch)
    assert loss_L2(LinearStub(alpha), batch) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("beta", [0.0, 0.7, 1.0, 1.4])
def test_L3_linear_scaling(beta, batch):
    # encode(z) = v and encode(decode(v)) = beta v
    expected = (1 - beta) ** 2 * np.sum(batch**2) / len(batch)
    assert loss_L3(LinearStub(beta), batch) == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_zero_batch_gives_zero_for_zero_preserving_model(batch):
    zero = np.zeros_like(batch)
    stub = LinearStub(0.7)
    assert loss_L2(stub, zero) == 0.0 and loss_L3(stub, zero) == 0.0


def test_L4_examples():
    z = np.zeros((1, 4, 3))
    z[0, 0, 0] = 10.0

    class Shrink(LinearStub):
        def encode(self, zn):
            return 0.8 * zn

    assert loss_L4(Shrink(), z) == pytest.approx(2.0, abs=1e-12)
    assert loss_L4(LinearStub(), z) == 0.0
    # for a linear encoder the term scales exactly with c, within the bound c * L4
    for c in (0.5, 2.0, 7.0):
        assert loss_L4(Shrink(), c * z) <= c * loss_L4(Shrink(), z) + 1e-12


def test_shape_mismatch(small_model):
    with pytest.raises(ValueError):
        loss_L1(small_model, np.zeros((2, 10, 4)))


def test_combine_examples():
    assert combine((0.3, 0.1, 0.05, 9.0)).total == pytest.approx(0.45, abs=1e-15)
    assert combine((0.3, 0.1, 0.05, 2.0), include_L4=True).total == pytest.approx(0.452, abs=1e-15)
    assert combine((0.0, 0.0, 0.0, 0.0), include_L4=True).total == 0.0
    assert combine((0.3, 0.1, 0.05, 2.0), (1.0, 0.0, 0.0)).total == 0.3


@pytest.mark.parametrize("w", [(0.0, 1.0, 1.0), (1.5, 1.0, 1.0), (1.0, -0.1, 1.0), (1.0, 1.0)])
def test_invalid_weights(w):
    with pytest.raises(ValueError):
        check_weights(w)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=4, max_size=4), st.floats(0.01, 1), st.floats(0, 1), st.floats(0, 1),
       st.floats(0.01, 1))
def test_total_linearity(L, w1, w2, w3, s):
    base = combine(L, (w1, w2, w3)).total
    scaled = combine(L, (w1, w2 * s, w3)).total
    assert scaled - base == pytest.approx((s - 1) * w2 * L[1], abs=1e-9 * (1 + base))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    model = AEModel.create(n_channels=3, d_v=2, hidden=(2,), seed=seed % 1000)
    b = rng.normal(size=(2, 8, 3)) * rng.uniform(0.1, 10)
    for f in (loss_L1, loss_L2, loss_L3, loss_L4):
        assert f(model, b) >= 0.0
    tl = total_loss(model, b, include_L4=True)
    assert min(tl.L1, tl.L2, tl.L3, tl.L4, tl.total) >= 0.0


def test_loss_and_grad_matches_single_losses(small_model, batch):
    val, _ = loss_and_grad(small_model, small_model.normalize(batch), include_L4=True, grad=False)
    for name, f in (("L1", loss_L1), ("L2", loss_L2), ("L3", loss_L3), ("L4", loss_L4)):
        assert getattr(val, name) == pytest.approx(f(small_model, batch), rel=1e-12)


@pytest.mark.parametrize("weights,l4", [((1.0, 0.0, 0.0), False), ((1.0, 1.0, 1.0), False), ((0.7, 0.3, 0.9), True)])
def test_gradient_against_finite_differences(weights, l4, small_model):
    zn = np.random.default_rng(1).normal(size=(2, 6, 3))
    model = AEModel.create(n_channels=3, d_v=2, hidden=(3, 2), seed=4)
    lam4 = 0.3  # large enough that the L4 path is visible in the check
    _, g = loss_and_grad(model, zn, weights, l4, lam4)
    flat = model.params.flat
    h = 1e-5
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss_and_grad(model, zn, weights, l4, lam4, grad=False)[0].total
        flat[i] = old - h
        dn = loss_and_grad(model, zn, weights, l4, lam4, grad=False)[0].total
        flat[i] = old
        fd[i] = (up - dn) / (2 * h)
    assert np.max(np.abs(g.flat - fd)) / np.max(np.abs(fd)) <= 1e-4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(small_model):
    zn = np.full((1, 5, 3), np.inf)
    with pytest.raises(TrainingDivergence):
        loss_and_grad(small_model, zn)


def test_checkpoint_round_trip(small_model, batch, tmp_path):
    path = tmp_path / "m.json"
    small_model.save(path)
    back = AEModel.load(path)
    for f in (loss_L1, loss_L2, loss_L3, loss_L4):
        assert abs(f(back, batch) - f(small_model, batch)) <= 1e-12
    assert back.meta == small_model.meta


def test_load_rejects_foreign_files(small_model):
    d = small_model.to_dict()
    with pytest.raises(ValueError):
        AEModel.from_dict({**d, "version": 99})
    bad = {**d, "architecture": {**d["architecture"], "d_v": 3}}
    with pytest.raises(ValueError):
        AEModel.from_dict(bad)


def test_invalid_normalization():
    with pytest.raises(ValueError):
        AEModel.create(n_channels=2, std=[1.0, 0.0])


@pytest.fixture(scope="module")
def tts_batches():
    ds = build_dataset(TtsParams(), 6000, 0.7, seed=2)
    return ds.train, ds.val


def test_zero_epochs_is_noop(tts_batches):
    tr, va = tts_batches
    cfg = TrainConfig(epochs=0, hidden=(2,), seed=5)
    model, hist = train(tr, va, cfg)
    fresh = AEModel.create(4, 2, (2,), seed=5)
    np.testing.assert_array_equal(model.params.flat, fresh.params.flat)
    assert len(hist.rows) == 1 and model.meta["epochs_run"] == 0


def test_training_is_deterministic_and_decreasing(tts_batches, tmp_path):
    tr, va = tts_batches
    cfg = TrainConfig.for_variant("ae_l1", epochs=12, hidden=(4,), lr=1e-2, batch_size=4, seed=1)
    m1, h1 = train(tr, va, cfg)
    m2, h2 = train(tr, va, cfg)
    np.testing.assert_array_equal(m1.params.flat, m2.params.flat)
    val_L1 = np.array([v.L1 for v in h1.val])
    assert val_L1[-1] < 0.7 * val_L1[0]
    # monotone trend: no epoch exceeds the running best by more than 10 %
    assert np.all(val_L1 <= 1.1 * np.minimum.accumulate(val_L1))
    # plain AE: the regularizers do not enter the total
    assert np.allclose(h1.column("total"), h1.column("L1"))

    h1.to_csv(tmp_path / "h.csv")
    with open(tmp_path / "h.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == HISTORY_COLUMNS and len(rows) == len(h1.rows) + 1


def test_variant_configs():
    assert TrainConfig.for_variant("ae_l1").weights == (1.0, 0.0, 0.0)
    assert TrainConfig.for_variant("iae_l4").include_L4 and TrainConfig.for_variant("iae_l4").lam4 == 0.001
    with pytest.raises(ValueError):
        TrainConfig.for_variant("vae")
    with pytest.raises(ValueError):
        train(np.zeros((0, 10, 4)), np.zeros((1, 10, 4)), TrainConfig())
