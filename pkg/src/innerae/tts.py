"""Three-tank benchmark: two pumped tanks joined through a middle tank, level-controlled by PI loops.

Tank 1 and tank 2 receive the pump flows u1, u2; water runs 1 -> 3 -> 2 and
leaves through the outlet of tank 2. The levels of tanks 1 and 2 are measured.
Time stamps start at one sampling period, so an 800 s episode at 1 s covers
t = 1..800 and a fault injected at 401 s leaves exactly 400 fault-free samples.
"""
import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

FAULT_KINDS = ("none", "leak_tank1", "sensor_gain_y2", "sensor_gain_y2_stepwise")
EPISODE_HEADER = ["t", "u1", "u2", "y1", "y2", "y1ref", "y2ref", "fault", "fault_mag"]
GRID_CELLS = 10
MAX_REFINE = 8
UNDERSHOOT_TOL = 1e-6


@dataclass(frozen=True)
class TtsParams:
    """Plant, noise and controller parameters (cm, s, cm^2, cm^3/s)."""

    A_c: float = 154.0
    s_n: float = 0.5
    a1: float = 0.46
    a2: float = 0.60
    a3: float = 0.45
    h_max: float = 62.0
    Q_max: float = 100.0
    g: float = 981.0
    sensor_noise: float = 0.1
    actuator_noise: float = 0.1
    kp: float = 3.0
    ki: float = 0.03
    dt: float = 1.0
    substeps: int = 10

    def __post_init__(self):
        for name in ("A_c", "s_n", "a1", "a2", "a3", "h_max", "Q_max", "g", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("sensor_noise", "actuator_noise", "kp", "ki"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be a positive integer")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def noiseless(self):
        return TtsParams(**{**asdict(self), "sensor_noise": 0.0, "actuator_noise": 0.0})


def flows(p: TtsParams, h1, h2, h3, leak=0.0):
    """Inter-tank, outlet and leak flows (Q13, Q32, Q20, Q_leak) for levels h."""
    k = math.sqrt(2.0 * p.g)
    d13 = h1 - h3
    d32 = h3 - h2
    q13 = p.a1 * p.s_n * math.copysign(k * math.sqrt(abs(d13)), d13)
    q32 = p.a3 * p.s_n * math.copysign(k * math.sqrt(abs(d32)), d32)
    q20 = p.a2 * p.s_n * k * math.sqrt(max(h2, 0.0))
    ql = leak * p.a1 * p.s_n * k * math.sqrt(max(h1, 0.0))
    return q13, q32, q20, ql


def level_rates(p: TtsParams, h, q1, q2, leak=0.0):
    h1, h2, h3 = h
    q13, q32, q20, ql = flows(p, h1, h2, h3, leak)
    return ((q1 - q13 - ql) / p.A_c, (q2 + q32 - q20) / p.A_c, (q13 - q32) / p.A_c)


def _rk4_step(p, h, q1, q2, leak, dt, depth=0):
    """RK4 step; halves the step when a level would undershoot zero so clamping stays negligible."""
    h1, h2, h3 = h
    k1 = level_rates(p, h, q1, q2, leak)
    k2 = level_rates(p, (h1 + 0.5 * dt * k1[0], h2 + 0.5 * dt * k1[1], h3 + 0.5 * dt * k1[2]), q1, q2, leak)
    k3 = level_rates(p, (h1 + 0.5 * dt * k2[0], h2 + 0.5 * dt * k2[1], h3 + 0.5 * dt * k2[2]), q1, q2, leak)
    k4 = level_rates(p, (h1 + dt * k3[0], h2 + dt * k3[1], h3 + dt * k3[2]), q1, q2, leak)
    out = tuple(h[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(3))
    if min(out) < -UNDERSHOOT_TOL and depth < MAX_REFINE:
        mid = _rk4_step(p, h, q1, q2, leak, 0.5 * dt, depth + 1)
        return _rk4_step(p, mid, q1, q2, leak, 0.5 * dt, depth + 1)
    return tuple(min(max(x, 0.0), p.h_max) for x in out)


def _rk4(p, h, q1, q2, leak):
    """One sampling period of RK4 substeps with levels clamped to [0, h_max]."""
    dt = p.dt / p.substeps
    for _ in range(int(p.substeps)):
        h = _rk4_step(p, h, q1, q2, leak, dt)
    return h


def steady_state(p: TtsParams, y1ref, y2ref):
    """Levels and pump flows holding tanks 1 and 2 at the references, leak-free.

    Returns (h1, h2, h3, Q1, Q2). Equal middle flows give the closed form
    a1^2 (h1 - h3) = a3^2 (h3 - h2) for h1 >= h2. Pump flows may fall outside
    [0, Q_max] when the setpoint is not reachable.
    """
    if y1ref < y2ref:
        raise ValueError("steady state assumes y1ref >= y2ref")
    w1, w3 = p.a1**2, p.a3**2
    h3 = (w1 * y1ref + w3 * y2ref) / (w1 + w3)
    q13, q32, q20, _ = flows(p, y1ref, y2ref, h3)
    return y1ref, y2ref, h3, q13, q20 - q32


# --- faults -------------------------------------------------------------------


@dataclass(frozen=True)
class FaultSpec:
    """Fault kind and a schedule of (start time, fraction) plateaus."""

    kind: str = "none"
    schedule: tuple = ()

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}; expected one of {FAULT_KINDS}")
        sched = tuple((float(t), float(f)) for t, f in self.schedule)
        times = [t for t, _ in sched]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("fault schedule times must be nondecreasing")
        if any(not 0.0 <= f < 1.0 for _, f in sched):
            raise ValueError("fault fractions must lie in [0, 1)")
        if self.kind == "none" and sched:
            raise ValueError("fault kind 'none' takes no schedule")
        object.__setattr__(self, "schedule", sched)

    @classmethod
    def leak(cls, start=401.0, frac=0.10):
        return cls("leak_tank1", ((start, frac),))

    @classmethod
    def sensor_gain(cls, start=401.0, frac=0.05):
        return cls("sensor_gain_y2", ((start, frac),))

    @classmethod
    def stepwise(cls, start=401.0, fracs=(0.05, 0.10, 0.15), plateau=133.0):
        return cls("sensor_gain_y2_stepwise", tuple((start + i * plateau, f) for i, f in enumerate(fracs)))

    def magnitude(self, t):
        """Fault fraction active at times ``t`` (0 before the first plateau)."""
        t = np.asarray(t, dtype=float)
        mag = np.zeros_like(t)
        for start, frac in self.schedule:
            mag = np.where(t >= start, frac, mag)
        return mag

    def to_dict(self):
        return {"kind": self.kind, "schedule": [list(s) for s in self.schedule]}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", "none"), tuple(tuple(s) for s in d.get("schedule", ())))


# --- references -------------------------------------------------------------


@dataclass
class References:
    values: np.ndarray
    coverage: float
    target: float

    @property
    def meets_target(self):
        return self.coverage >= self.target


def admissible_cells(n=GRID_CELLS):
    """Grid cells (i1, i2) that meet the ordered region y1ref > y2ref."""
    return {(i, j) for i in range(n) for j in range(n) if i >= j}


def reference_coverage(refs, p: TtsParams, band=(0.1, 0.9), n=GRID_CELLS):
    """Fraction of admissible setpoint-grid cells visited by ``refs`` (samples x 2)."""
    lo, hi = band[0] * p.h_max, band[1] * p.h_max
    idx = np.clip(((np.asarray(refs) - lo) / (hi - lo) * n).astype(int), 0, n - 1)
    visited = {tuple(c) for c in np.unique(idx, axis=0)}
    cells = admissible_cells(n)
    return len(visited & cells) / len(cells)


def generate_references(duration, seed, coverage_target=0.85, params=None, dwell=(200, 600), band=(0.1, 0.9)):
    """Piecewise-constant random setpoints with y1ref > y2ref, one row per sample."""
    if not 0 < coverage_target <= 1:
        raise ValueError("coverage target must lie in (0, 1]")
    p = params or TtsParams()
    N = int(round(duration / p.dt))
    if N < 1:
        raise ValueError("duration shorter than one sampling period")
    rng = np.random.default_rng(seed)
    lo, hi = band[0] * p.h_max, band[1] * p.h_max
    out = np.empty((N, 2))
    k = 0
    while k < N:
        a, b = rng.uniform(lo, hi, size=2)
        while a == b:
            a, b = rng.uniform(lo, hi, size=2)
        hold = int(rng.integers(dwell[0], dwell[1] + 1) / p.dt)
        out[k : k + hold] = (max(a, b), min(a, b))
        k += hold
    return References(out, reference_coverage(out, p, band), coverage_target)


# --- episodes -------------------------------------------------------------------


@dataclass
class Episode:
    dt: float
    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    ref: np.ndarray
    fault: np.ndarray
    fault_mag: np.ndarray
    seed: int = 0
    levels: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.t)
        for name in ("u", "y", "ref", "fault", "fault_mag"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"episode field {name} has length {len(getattr(self, name))}, expected {n}")

    @property
    def n_samples(self):
        return len(self.t)

    @property
    def z(self):
        """Stacked process data (u1, u2, y1, y2), samples x 4."""
        return np.hstack([self.u, self.y])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EPISODE_HEADER)
            for k in range(self.n_samples):
                w.writerow(
                    [f"{self.t[k]:.6f}"]
                    + [repr(float(x)) for x in (*self.u[k], *self.y[k], *self.ref[k])]
                    + [int(self.fault[k]), repr(float(self.fault_mag[k]))]
                )

    @classmethod
    def from_csv(cls, path, seed=0):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0] != EPISODE_HEADER:
            raise ValueError(f"{path}: unexpected header {rows[0]}")
        data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(EPISODE_HEADER))
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(dt, t, data[:, 1:3], data[:, 3:5], data[:, 5:7], data[:, 7].astype(int), data[:, 8], seed)


def simulate_episode(
    params: TtsParams,
    fault: FaultSpec,
    duration,
    seed,
    refs=None,
    warmup=600.0,
    h0=None,
    inputs=None,
):
    """Closed-loop episode of ``duration`` seconds.

    Parameters
    ----------
    refs : (N, 2) array, optional
        Setpoints per recorded sample; random piecewise-constant ones by default.
    warmup : float
        Seconds simulated before recording at the first setpoint, starting from
        its steady state, so records begin in settled operation.
    h0 : sequence of 3 floats, optional
        Initial levels; disables the steady-state start (warm-up still applies).
    inputs : (N, 2) array, optional
        Pump commands replacing the PI controllers (open loop, no warm-up).
    """
    p = params
    N = int(round(duration / p.dt))
    if N < 1:
        raise ValueError("duration must cover at least one sampling period")
    ref_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    if refs is None:
        refs = generate_references(duration, ref_seed, params=p).values
    refs = np.asarray(refs, dtype=float)
    if refs.shape != (N, 2):
        raise ValueError(f"references must have shape {(N, 2)}, got {refs.shape}")
    open_loop = inputs is not None
    Nw = 0 if open_loop else int(round(warmup / p.dt))
    total = Nw + N
    all_refs = np.vstack([np.repeat(refs[:1], Nw, axis=0), refs])
    t = p.dt * (np.arange(N) + 1)
    mag = fault.magnitude(t)
    mag_all = np.concatenate([np.zeros(Nw), mag])
    leak = mag_all if fault.kind == "leak_tank1" else np.zeros(total)
    gain = mag_all if fault.kind.startswith("sensor_gain") else np.zeros(total)

    rng = np.random.default_rng(noise_seed)
    sensor = rng.normal(0.0, 1.0, size=(total, 2)) * p.sensor_noise
    actuator = rng.normal(0.0, 1.0, size=(total, 2)) * p.actuator_noise

    if h0 is None:
        r1, r2 = all_refs[0]
        h1, h2, h3, q1s, q2s = steady_state(p, r1, r2)
        h = (h1, h2, h3)
        integ = [min(max(q1s, 0.0), p.Q_max), min(max(q2s, 0.0), p.Q_max)]
    else:
        h = tuple(float(x) for x in h0)
        integ = [0.0, 0.0]

    U = np.empty((total, 2))
    Y = np.empty((total, 2))
    H = np.empty((total, 3))
    qmax, kp, ki, dt = p.Q_max, p.kp, p.ki, p.dt
    for k in range(total):
        H[k] = h
        y1 = h[0] + sensor[k, 0]
        y2 = (1.0 - gain[k]) * h[1] + sensor[k, 1]
        Y[k] = (y1, y2)
        if open_loop:
            cmd = (min(max(inputs[k - Nw][0], 0.0), qmax), min(max(inputs[k - Nw][1], 0.0), qmax))
        else:
            cmd = []
            for i, (r, yk) in enumerate(zip(all_refs[k], (y1, y2))):
                e = r - yk
                raw = kp * e + integ[i]
                u = min(max(raw, 0.0), qmax)
                # conditional integration as anti-windup
                if raw == u or (raw > qmax and e < 0) or (raw < 0 and e > 0):
                    integ[i] += ki * e * dt
                cmd.append(u)
        U[k] = cmd
        q1 = min(max(cmd[0] + actuator[k, 0], 0.0), qmax)
        q2 = min(max(cmd[1] + actuator[k, 1], 0.0), qmax)
        h = _rk4(p, h, q1, q2, leak[k])

    sl = slice(Nw, None)
    return Episode(
        p.dt, t, U[sl], Y[sl], all_refs[sl], (mag > 0).astype(int), mag,
        int(seed) if np.isscalar(seed) else 0, H[sl],
    )


# --- datasets -------------------------------------------------------------------


@dataclass
class Dataset:
    """Fault-free batches (batch, time, channel) of (u1, u2, y1, y2) with a train/validation split."""

    batches: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    seed: int
    params: TtsParams

    @property
    def train(self):
        return self.batches[self.train_idx]

    @property
    def val(self):
        return self.batches[self.val_idx]


def split_indices(n_batches, ratio, seed):
    if not 0 < ratio <= 1:
        raise ValueError(f"split ratio must lie in (0, 1], got {ratio}")
    perm = np.random.default_rng(seed).permutation(n_batches)
    n_train = int(round(ratio * n_batches))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def build_dataset(params: TtsParams, n_samples, ratio=0.7, seed=0, batch_len=100):
    """Continuous fault-free run sliced into batches of ``batch_len`` samples, split by batch."""
    if n_samples < batch_len:
        raise ValueError(f"need at least {batch_len} samples for one batch, got {n_samples}")
    if not 0 < ratio <= 1:
        raise ValueError(f"split ratio must lie in (0, 1], got {ratio}")
    n_batches = n_samples // batch_len
    ep = simulate_episode(params, FaultSpec(), n_batches * batch_len * params.dt, seed)
    batches = ep.z.reshape(n_batches, batch_len, 4)
    train_idx, val_idx = split_indices(n_batches, ratio, seed)
    return Dataset(batches, train_idx, val_idx, seed, params)
