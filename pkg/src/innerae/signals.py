"""Uniformly sampled multichannel signals and their CSV form."""
import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SignalRecord:
    """Samples ``values[k, c]`` of channel ``c`` at time ``t0 + k * dt``."""

    values: np.ndarray
    dt: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValueError(f"values must be (samples, channels), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("signal values must be finite")
        if not self.dt > 0:
            raise ValueError(f"sampling period must be positive, got {self.dt}")
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(self.n_samples)

    def channels(self, sl):
        return SignalRecord(self.values[:, sl], self.dt, self.t0)

    def stack(self, other):
        """Channel-wise concatenation, e.g. ``u.stack(y)`` gives the record of (u; y)."""
        if other.n_samples != self.n_samples:
            raise ValueError("records differ in length")
        return SignalRecord(np.hstack([self.values, other.values]), self.dt, self.t0)

    def norm(self, skip=0):
        """Discrete l2 norm, optionally ignoring ``skip`` samples at each end."""
        return float(np.linalg.norm(interior(self.values, skip)))

    def to_csv(self, path):
        write_csv(self, path)

    @classmethod
    def from_csv(cls, path):
        return read_csv(path)


def interior(values, skip):
    """Drop ``skip`` samples from both ends of a (samples, ...) array."""
    if skip <= 0:
        return values
    if 2 * skip >= len(values):
        raise ValueError(f"boundary window {skip} leaves no interior in {len(values)} samples")
    return values[skip:-skip]


def write_csv(record: SignalRecord, path):
    header = ["t"] + [f"ch{i}" for i in range(record.n_channels)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for tk, row in zip(record.t, record.values):
            w.writerow([f"{tk:.6f}"] + [repr(float(x)) for x in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise ValueError(f"{path}: expected header starting with 't'")
    data = np.array([[float(x) for x in r] for r in body], dtype=float).reshape(len(body), len(header))
    t = data[:, 0]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    if len(t) > 2 and not np.allclose(np.diff(t), dt, atol=2e-6):
        raise ValueError(f"{path}: samples are not uniformly spaced")
    return SignalRecord(data[:, 1:], dt, float(t[0]) if len(t) else 0.0)


def smooth_burst(rng, n_samples, n_channels, dt, margin, max_omega=2.0, n_tones=6):
    """Random multi-tone signal under a raised-cosine window, zero within ``margin`` samples of each end.

    Compact support well inside the record lets causal and anticausal filters
    settle before the boundaries, so finite-horizon operators act as on the whole line.
    """
    span = n_samples - 2 * margin
    if span < 2:
        raise ValueError(f"margin {margin} leaves no support in {n_samples} samples")
    t = dt * np.arange(n_samples)
    omega = rng.uniform(0.05, max_omega, size=(n_tones, n_channels))
    phase = rng.uniform(0, 2 * np.pi, size=(n_tones, n_channels))
    amp = rng.normal(size=(n_tones, n_channels))
    tones = np.einsum("kc,nkc->nc", amp, np.sin(t[:, None, None] * omega + phase))
    window = np.zeros(n_samples)
    window[margin : n_samples - margin] = np.sin(np.pi * np.arange(span) / (span - 1)) ** 2
    return SignalRecord(tones * window[:, None], dt)
