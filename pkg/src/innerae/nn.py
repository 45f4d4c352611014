"""Small recurrent networks with hand-written reverse-mode gradients.

Sequences are arrays of shape (batch, time, features). A RecurrentStack is a
chain of LSTM layers followed by a per-step affine read-out. Its backward pass
returns the input gradient as well, so stacks compose (decoder after encoder)
without a general autodiff graph. The time recursions run in compiled loops;
everything else is plain numpy.
"""
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from numba import njit


class ParamStore:
    """Named parameter arrays that are views into one flat vector."""

    def __init__(self):
        self._shapes = OrderedDict()
        self._offsets = {}
        self.flat = np.zeros(0)

    def add(self, name, value):
        if name in self._shapes:
            raise ValueError(f"duplicate parameter name {name!r}")
        value = np.asarray(value, dtype=float)
        self._offsets[name] = self.flat.size
        self._shapes[name] = value.shape
        self.flat = np.concatenate([self.flat, value.ravel()])

    def __getitem__(self, name):
        off = self._offsets[name]
        shape = self._shapes[name]
        return self.flat[off : off + int(np.prod(shape, dtype=int))].reshape(shape)

    def __contains__(self, name):
        return name in self._shapes

    def names(self):
        return list(self._shapes)

    def shapes(self):
        return dict(self._shapes)

    @property
    def size(self):
        return self.flat.size

    def zeros_like(self):
        """A store with the same layout and zero entries (used for gradients)."""
        g = ParamStore.__new__(ParamStore)
        g._shapes = self._shapes.copy()
        g._offsets = self._offsets.copy()
        g.flat = np.zeros_like(self.flat)
        return g

    def copy(self):
        c = self.zeros_like()
        c.flat[:] = self.flat
        return c

    def to_dict(self):
        return {name: self[name].tolist() for name in self._shapes}

    @classmethod
    def from_dict(cls, d):
        s = cls()
        for name, value in d.items():
            s.add(name, value)
        return s


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class LayerCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray  # (B, T, 4h) activated gates, order i, f, o, g
    tanh_c: np.ndarray


@dataclass
class Tape:
    layers: list = field(default_factory=list)
    top: np.ndarray = None  # input of the read-out


@dataclass(frozen=True)
class RecurrentStack:
    """LSTM layers of the given hidden widths followed by an affine read-out to ``n_out``.

    Gate order in the packed weights is (input, forget, output, candidate).
    """

    name: str
    n_in: int
    hidden: tuple
    n_out: int

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_in < 1 or self.n_out < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")

    def layer_sizes(self):
        ins = (self.n_in,) + self.hidden[:-1]
        return list(zip(ins, self.hidden))

    def init(self, store: ParamStore, rng, forget_bias=1.0):
        for k, (n_in, h) in enumerate(self.layer_sizes()):
            pre = f"{self.name}.l{k}"
            store.add(pre + ".Wx", rng.uniform(-1, 1, size=(n_in, 4 * h)) / np.sqrt(n_in))
            store.add(pre + ".Wh", np.hstack([orthogonal(rng, h) for _ in range(4)]))
            b = np.zeros(4 * h)
            b[h : 2 * h] = forget_bias
            store.add(pre + ".b", b)
        top = self.hidden[-1] if self.hidden else self.n_in
        store.add(f"{self.name}.out.W", rng.uniform(-1, 1, size=(top, self.n_out)) / np.sqrt(top))
        store.add(f"{self.name}.out.b", np.zeros(self.n_out))
        return store

    def forward(self, store: ParamStore, X):
        """Outputs (B, T, n_out) from inputs (B, T, n_in), zero initial states."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[2] != self.n_in:
            raise ValueError(f"{self.name}: expected input (batch, time, {self.n_in}), got {X.shape}")
        tape = Tape()
        H = X
        for k, (_, h) in enumerate(self.layer_sizes()):
            H, cache = _lstm_forward(store, f"{self.name}.l{k}", H, h)
            tape.layers.append(cache)
        tape.top = H
        Y = H @ store[f"{self.name}.out.W"] + store[f"{self.name}.out.b"]
        return Y, tape

    def backward(self, store: ParamStore, tape: Tape, dY, grads: ParamStore):
        """Accumulate parameter gradients into ``grads``; return the input gradient."""
        W = store[f"{self.name}.out.W"]
        if dY.shape[:2] != tape.top.shape[:2] or dY.shape[2] != self.n_out:
            raise ValueError(f"{self.name}: output gradient shape {dY.shape} does not match the tape")
        grads[f"{self.name}.out.W"][...] += np.einsum("bti,bto->io", tape.top, dY)
        grads[f"{self.name}.out.b"][...] += dY.sum(axis=(0, 1))
        dH = dY @ W.T
        for k in range(len(self.hidden) - 1, -1, -1):
            dH = _lstm_backward(store, f"{self.name}.l{k}", tape.layers[k], dH, grads)
        return dH


@njit(cache=True)
def _lstm_scan(Z, Wh, H, Hp, Cp, G, TC):
    B, T, h4 = Z.shape
    h = h4 // 4
    hs = np.zeros(h)
    cs = np.zeros(h)
    a = np.empty(h4)
    for b in range(B):
        hs[:] = 0.0
        cs[:] = 0.0
        for t in range(T):
            for k in range(h4):
                acc = Z[b, t, k]
                for j in range(h):
                    acc += hs[j] * Wh[j, k]
                a[k] = acc
            for j in range(h):
                Hp[b, t, j] = hs[j]
                Cp[b, t, j] = cs[j]
                gi = 0.5 * (1.0 + np.tanh(0.5 * a[j]))
                gf = 0.5 * (1.0 + np.tanh(0.5 * a[h + j]))
                go = 0.5 * (1.0 + np.tanh(0.5 * a[2 * h + j]))
                gg = np.tanh(a[3 * h + j])
                G[b, t, j] = gi
                G[b, t, h + j] = gf
                G[b, t, 2 * h + j] = go
                G[b, t, 3 * h + j] = gg
                cs[j] = gf * cs[j] + gi * gg
                tc = np.tanh(cs[j])
                TC[b, t, j] = tc
            for j in range(h):
                hs[j] = G[b, t, 2 * h + j] * TC[b, t, j]
                H[b, t, j] = hs[j]


@njit(cache=True)
def _lstm_scan_back(dH, Wh, G, TC, Cp, dA):
    B, T, h4 = G.shape
    h = h4 // 4
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for b in range(B):
        dh_next[:] = 0.0
        dc_next[:] = 0.0
        for t in range(T - 1, -1, -1):
            for j in range(h):
                gi = G[b, t, j]
                gf = G[b, t, h + j]
                go = G[b, t, 2 * h + j]
                gg = G[b, t, 3 * h + j]
                tc = TC[b, t, j]
                dh = dH[b, t, j] + dh_next[j]
                dc = dc_next[j] + dh * go * (1.0 - tc * tc)
                dA[b, t, j] = dc * gg * gi * (1.0 - gi)
                dA[b, t, h + j] = dc * Cp[b, t, j] * gf * (1.0 - gf)
                dA[b, t, 2 * h + j] = dh * tc * go * (1.0 - go)
                dA[b, t, 3 * h + j] = dc * gi * (1.0 - gg * gg)
                dc_next[j] = dc * gf
            for j in range(h):
                acc = 0.0
                for k in range(h4):
                    acc += dA[b, t, k] * Wh[j, k]
                dh_next[j] = acc


def _lstm_forward(store, pre, X, h):
    Z = np.ascontiguousarray(X @ store[pre + ".Wx"] + store[pre + ".b"])
    B, T, _ = X.shape
    H = np.empty((B, T, h))
    Hp = np.empty((B, T, h))
    Cp = np.empty((B, T, h))
    G = np.empty((B, T, 4 * h))
    TC = np.empty((B, T, h))
    _lstm_scan(Z, np.ascontiguousarray(store[pre + ".Wh"]), H, Hp, Cp, G, TC)
    return H, LayerCache(X, Hp, Cp, G, TC)


def _lstm_backward(store, pre, cache: LayerCache, dH, grads):
    dA = np.empty_like(cache.gates)
    _lstm_scan_back(
        np.ascontiguousarray(dH), np.ascontiguousarray(store[pre + ".Wh"]), cache.gates, cache.tanh_c, cache.c_prev, dA
    )
    grads[pre + ".Wx"][...] += np.einsum("bti,btk->ik", cache.x, dA)
    grads[pre + ".Wh"][...] += np.einsum("bti,btk->ik", cache.h_prev, dA)
    grads[pre + ".b"][...] += dA.sum(axis=(0, 1))
    return dA @ store[pre + ".Wx"].T


# --- optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (new params, new state)."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    mhat = m / (1 - beta1**t)
    vhat = v / (1 - beta2**t)
    return params - lr * mhat / (np.sqrt(vhat) + eps), AdamState(m, v, t)
