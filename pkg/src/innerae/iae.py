"""Recurrent autoencoders over process data z = (u; y) and their training losses.

With encoder E and decoder D acting on standardized batches,

    L1 = mean ||z - D(E z)||^2                       reconstruction
    L2 = mean ||zhat - D(E zhat)||^2,  zhat = D(E z)  idempotency
    L3 = mean ||E z - E zhat||^2                      latent consistency
    L4 = mean | ||z|| - ||E z|| |                     norm matching

where norms are taken over a whole batch (time and channels) and the mean is
over batches. Driving L2 and L3 to zero makes D E a projection and E D the
identity on latents, i.e. the decoder behaves like an inner image
representation and the encoder like its adjoint.
"""
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import AdamState, ParamStore, RecurrentStack, adam_step
from .numlin import NumericalError

FORMAT = "innerae-model"
FORMAT_VERSION = 1
HISTORY_COLUMNS = ["epoch", "L1", "L2", "L3", "L4", "total", "val_total"]

VARIANTS = {
    "ae_l1": dict(weights=(1.0, 0.0, 0.0), include_L4=False),
    "iae": dict(weights=(1.0, 1.0, 1.0), include_L4=False),
    "iae_l4": dict(weights=(1.0, 1.0, 1.0), include_L4=True),
}


class TrainingDivergence(NumericalError):
    """The training loss became non-finite."""


@dataclass
class AEModel:
    """Encoder/decoder pair with the standardization of the training data."""

    encoder: RecurrentStack
    decoder: RecurrentStack
    params: ParamStore
    mean: np.ndarray
    std: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std)) and np.all(self.std > 0)):
            raise ValueError("normalization statistics must be finite with positive scales")
        if self.encoder.n_out != self.decoder.n_in or self.decoder.n_out != self.encoder.n_in:
            raise ValueError("encoder and decoder widths do not chain")

    @classmethod
    def create(cls, n_channels=4, d_v=2, hidden=(2, 2, 2, 2), seed=0, mean=None, std=None, meta=None):
        enc = RecurrentStack("enc", n_channels, tuple(hidden), d_v)
        dec = RecurrentStack("dec", d_v, tuple(hidden), n_channels)
        rng = np.random.default_rng(seed)
        store = ParamStore()
        enc.init(store, rng)
        dec.init(store, rng)
        mean = np.zeros(n_channels) if mean is None else mean
        std = np.ones(n_channels) if std is None else std
        return cls(enc, dec, store, mean, std, dict(meta or {}, seed=seed))

    @property
    def n_channels(self):
        return self.encoder.n_in

    @property
    def d_v(self):
        return self.encoder.n_out

    def normalize(self, z):
        return (np.asarray(z, dtype=float) - self.mean) / self.std

    def denormalize(self, zn):
        return zn * self.std + self.mean

    def encode(self, zn):
        return self.encoder.forward(self.params, _batch(zn))[0]

    def decode(self, v):
        return self.decoder.forward(self.params, _batch(v))[0]

    def reconstruct(self, z):
        """Raw-unit reconstruction of raw-unit batches (batch, time, channels)."""
        return self.denormalize(self.decode(self.encode(self.normalize(z))))

    # --- persistence ---

    def to_dict(self):
        arch = {
            "n_channels": self.n_channels,
            "d_v": self.d_v,
            "encoder_hidden": list(self.encoder.hidden),
            "decoder_hidden": list(self.decoder.hidden),
        }
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "architecture": arch,
            "normalization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "params": self.params.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT or d.get("version") != FORMAT_VERSION:
            raise ValueError(f"not a version {FORMAT_VERSION} {FORMAT} file")
        a = d["architecture"]
        enc = RecurrentStack("enc", a["n_channels"], tuple(a["encoder_hidden"]), a["d_v"])
        dec = RecurrentStack("dec", a["d_v"], tuple(a["decoder_hidden"]), a["n_channels"])
        store = ParamStore.from_dict(d["params"])
        expected = ParamStore()
        enc.init(expected, np.random.default_rng(0))
        dec.init(expected, np.random.default_rng(0))
        if store.shapes() != expected.shapes():
            raise ValueError("parameter shapes do not match the architecture")
        n = d["normalization"]
        return cls(enc, dec, store, n["mean"], n["std"], d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _batch(x):
    x = np.asarray(x, dtype=float)
    return x[None] if x.ndim == 2 else x


def _check_batch(model, batch):
    batch = _batch(batch)
    if batch.ndim != 3 or batch.shape[2] != model.n_channels:
        raise ValueError(f"expected batches (batch, time, {model.n_channels}), got {np.shape(batch)}")
    return batch


# --- losses ---------------------------------------------------------------------


def _sq(x):
    return float(np.sum(x * x)) / len(x)


def loss_L1(model, batch):
    z = model.normalize(_check_batch(model, batch))
    return _sq(z - model.decode(model.encode(z)))


def loss_L2(model, batch):
    z = model.normalize(_check_batch(model, batch))
    zh = model.decode(model.encode(z))
    return _sq(zh - model.decode(model.encode(zh)))


def loss_L3(model, batch):
    z = model.normalize(_check_batch(model, batch))
    v = model.encode(z)
    return _sq(v - model.encode(model.decode(v)))


def loss_L4(model, batch):
    z = model.normalize(_check_batch(model, batch))
    v = model.encode(z)
    nz = np.sqrt(np.sum(z * z, axis=(1, 2)))
    nv = np.sqrt(np.sum(v * v, axis=(1, 2)))
    return float(np.mean(np.abs(nz - nv)))


@dataclass
class LossBreakdown:
    L1: float
    L2: float
    L3: float
    L4: float
    total: float

    def as_dict(self):
        return asdict(self)


def check_weights(weights):
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or any(not 0 <= x <= 1 for x in w) or w[0] <= 0:
        raise ValueError(f"loss weights must be three values in [0, 1] with the L1 weight positive, got {weights}")
    return w


def combine(L, weights=(1.0, 1.0, 1.0), include_L4=False, lam4=0.001):
    """Weighted total of the terms L = (L1, L2, L3, L4)."""
    w = check_weights(weights)
    total = w[0] * L[0] + w[1] * L[1] + w[2] * L[2] + (lam4 * L[3] if include_L4 else 0.0)
    return LossBreakdown(float(L[0]), float(L[1]), float(L[2]), float(L[3]), float(total))


def total_loss(model, batch, weights=(1.0, 1.0, 1.0), include_L4=False, lam4=0.001):
    val, _ = loss_and_grad(model, model.normalize(_check_batch(model, batch)), weights, include_L4, lam4, grad=False)
    return val


def loss_and_grad(model, zn, weights=(1.0, 1.0, 1.0), include_L4=False, lam4=0.001, grad=True):
    """All loss terms on standardized batches ``zn`` and, optionally, the gradient of the total.

    The reconstruction inside L2 and L3 is part of the graph, so their
    gradients flow through both passes of the encoder and decoder.
    """
    w1, w2, w3 = check_weights(weights)
    enc, dec, P = model.encoder, model.decoder, model.params
    M = len(zn)
    v, te1 = enc.forward(P, zn)
    zh, td1 = dec.forward(P, v)
    vh, te2 = enc.forward(P, zh)
    zhh, td2 = dec.forward(P, vh)
    r1 = zn - zh
    r2 = zh - zhh
    r3 = v - vh
    nz = np.sqrt(np.sum(zn * zn, axis=(1, 2)))
    nv = np.sqrt(np.sum(v * v, axis=(1, 2)))
    L = (_sq(r1), _sq(r2), _sq(r3), float(np.mean(np.abs(nz - nv))))
    val = combine(L, (w1, w2, w3), include_L4, lam4)
    if not np.isfinite(val.total):
        raise TrainingDivergence(f"non-finite loss {val}")
    if not grad:
        return val, None

    g = P.zeros_like()
    dzhh = -2.0 * w2 / M * r2
    dvh = -2.0 * w3 / M * r3
    if w2:
        dvh = dvh + dec.backward(P, td2, dzhh, g)
    dzh = -2.0 * w1 / M * r1 + 2.0 * w2 / M * r2
    if w2 or w3:
        dzh = dzh + enc.backward(P, te2, dvh, g)
    dv = dec.backward(P, td1, dzh, g) + 2.0 * w3 / M * r3
    if include_L4:
        safe = np.where(nv > 0, nv, 1.0)
        dv = dv + lam4 / M * (np.sign(nv - nz) / safe)[:, None, None] * v
    enc.backward(P, te1, dv, g)
    return val, g


def evaluate(model, batches, weights=(1.0, 1.0, 1.0), include_L4=False, lam4=0.001, chunk=512):
    """Loss breakdown averaged over all batches (raw units in)."""
    batches = _check_batch(model, batches)
    if len(batches) == 0:
        raise ValueError("no batches to evaluate")
    acc = np.zeros(4)
    for s in range(0, len(batches), chunk):
        part = model.normalize(batches[s : s + chunk])
        val, _ = loss_and_grad(model, part, weights, include_L4, lam4, grad=False)
        acc += len(part) * np.array([val.L1, val.L2, val.L3, val.L4])
    return combine(acc / len(batches), weights, include_L4, lam4)


# --- training -------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 200
    patience: int = 20
    weights: tuple = (1.0, 1.0, 1.0)
    include_L4: bool = False
    lam4: float = 0.001
    seed: int = 0
    hidden: tuple = (2, 2, 2, 2)
    d_v: int = 2

    @classmethod
    def for_variant(cls, variant, **overrides):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        return cls(**{**VARIANTS[variant], **overrides})


@dataclass
class History:
    rows: list = field(default_factory=list)
    val: list = field(default_factory=list)

    def append(self, epoch, train: LossBreakdown, val: LossBreakdown):
        self.rows.append([epoch, train.L1, train.L2, train.L3, train.L4, train.total, val.total])
        self.val.append(val)

    def column(self, name):
        i = HISTORY_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])


def train(train_batches, val_batches, config: TrainConfig, meta=None, log=None):
    """Mini-batch Adam on the weighted loss; keeps the best-validation parameters.

    Row 0 of the history holds the untrained model's losses.
    """
    train_batches = np.asarray(train_batches, dtype=float)
    val_batches = np.asarray(val_batches, dtype=float)
    if len(train_batches) == 0 or len(val_batches) == 0:
        raise ValueError("training and validation sets must be nonempty")
    w = check_weights(config.weights)
    mean = train_batches.mean(axis=(0, 1))
    std = train_batches.std(axis=(0, 1))
    std = np.where(std > 0, std, 1.0)
    model = AEModel.create(
        train_batches.shape[2], config.d_v, config.hidden, config.seed, mean, std,
        meta=dict(meta or {}, weights=list(w), include_L4=config.include_L4, lam4=config.lam4),
    )
    kw = dict(weights=w, include_L4=config.include_L4, lam4=config.lam4)
    zn_train = model.normalize(train_batches)
    hist = History()
    hist.append(0, evaluate(model, train_batches, **kw), evaluate(model, val_batches, **kw))
    best = (hist.val[0].total, model.params.flat.copy(), 0)
    state = AdamState.fresh(model.params.size)
    rng = np.random.default_rng(config.seed + 1)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(zn_train))
        for s in range(0, len(order), config.batch_size):
            _, g = loss_and_grad(model, zn_train[order[s : s + config.batch_size]], **kw)
            model.params.flat[:], state = adam_step(
                model.params.flat, g.flat, state, config.lr, config.beta1, config.beta2, config.eps
            )
        tr = evaluate(model, train_batches, **kw)
        va = evaluate(model, val_batches, **kw)
        hist.append(epoch, tr, va)
        if log is not None:
            log(f"epoch {epoch}: train {tr.total:.5g} (L1 {tr.L1:.5g}) val {va.total:.5g}")
        if va.total < best[0]:
            best = (va.total, model.params.flat.copy(), epoch)
        elif epoch - best[2] >= config.patience:
            break
    model.params.flat[:] = best[1]
    model.meta.update(epochs_run=len(hist.rows) - 1, best_epoch=best[2])
    return model, hist
