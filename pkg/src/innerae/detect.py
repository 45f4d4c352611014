"""Moving-window residual evaluation, threshold calibration and detection metrics."""
import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .signals import SignalRecord
from .tts import FaultSpec, TtsParams, simulate_episode

UNDEFINED = None  # marker for a rate whose denominator is zero


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 100
    gamma: float = 0.05
    J_th: float | None = None

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ValueError(f"window must be a positive integer, got {self.window}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"FAR budget must lie in (0, 1), got {self.gamma}")
        if self.J_th is not None and not self.J_th >= 0:
            raise ValueError("threshold must be nonnegative")


def j_statistic(z, zhat):
    """J = sum over the window of (z - zhat)'(z - zhat); leading axes other than the last two are kept."""
    d = np.asarray(z, dtype=float) - np.asarray(zhat, dtype=float)
    return np.sum(d * d, axis=(-2, -1))


def evaluate_J(model, window, length=None):
    """J of one raw-unit window (samples x channels) in the model's standardized units."""
    w = window.values if isinstance(window, SignalRecord) else np.asarray(window, dtype=float)
    if length is not None and len(w) != length:
        raise ValueError(f"window has {len(w)} samples, expected {length}")
    zn = model.normalize(w[None])
    return float(j_statistic(zn, model.decode(model.encode(zn)))[0])


def sliding_windows(z, window, stride=1):
    """(count, window, channels) view of all windows of a (samples, channels) array."""
    z = np.asarray(z, dtype=float)
    if len(z) < window:
        raise ValueError(f"record of {len(z)} samples is shorter than the window {window}")
    view = np.lib.stride_tricks.sliding_window_view(z, window, axis=0)  # (count, channels, window)
    return view.transpose(0, 2, 1)[::stride]


def evaluate_windows(model, z, window=100, stride=1, chunk=1024):
    """J for every window of the raw-unit record ``z``."""
    wins = sliding_windows(z, window, stride)
    out = np.empty(len(wins))
    for s in range(0, len(wins), chunk):
        zn = model.normalize(wins[s : s + chunk])
        out[s : s + chunk] = j_statistic(zn, model.decode(model.encode(zn)))
    return out


def window_labels(fault_flags, window=100, stride=1):
    """A window is faulty when at least half of its samples are post-injection."""
    f = np.asarray(fault_flags, dtype=float)
    frac = sliding_windows(f[:, None], window, stride)[:, :, 0].mean(axis=1)
    return frac >= 0.5


def quantile_type1(values, q):
    """Smallest sample x with empirical CDF F(x) >= q (inverse empirical CDF)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no values to take a quantile of")
    k = max(math.ceil(q * v.size - 1e-9), 1)
    return float(v[k - 1])


def calibrate_threshold(J_values, gamma=0.05):
    """J_th as the empirical (1 - gamma)-quantile of fault-free J values.

    Warns when there are fewer than 100 / gamma windows.
    """
    J_values = np.asarray(J_values, dtype=float).ravel()
    if J_values.size == 0:
        raise ValueError("cannot calibrate on an empty set of windows")
    if not 0 < gamma < 1:
        raise ValueError(f"FAR budget must lie in (0, 1), got {gamma}")
    if J_values.size < 100 / gamma:
        warnings.warn(f"only {J_values.size} calibration windows; at least {math.ceil(100 / gamma)} recommended")
    return quantile_type1(J_values, 1.0 - gamma)


def decide(J, J_th):
    """Faulty iff J > J_th; the boundary belongs to fault-free."""
    return np.asarray(J) > J_th


@dataclass
class Metrics:
    N: int
    N_F: int
    N_FF: int
    N_FA: int
    N_MD: int
    FAR: float | None
    MDR: float | None
    accuracy: float | None
    F1: float | None

    def as_dict(self):
        return dict(self.__dict__)


def compute_metrics(decisions, labels):
    decisions = np.asarray(decisions, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if decisions.shape != labels.shape:
        raise ValueError(f"{decisions.shape} decisions but {labels.shape} labels")
    N = int(labels.size)
    N_F = int(labels.sum())
    N_FF = N - N_F
    N_FA = int(np.sum(decisions & ~labels))
    N_MD = int(np.sum(~decisions & labels))
    far = N_FA / N_FF if N_FF else UNDEFINED
    mdr = N_MD / N_F if N_F else UNDEFINED
    acc = (N - N_FA - N_MD) / N if N else UNDEFINED
    tp = N_F - N_MD
    den = tp + 0.5 * (N_FA + N_MD)
    f1 = tp / den if den else UNDEFINED
    return Metrics(N, N_F, N_FF, N_FA, N_MD, far, mdr, acc, f1)


def summarize(values):
    """(mean, std) over the defined entries, or (None, None)."""
    vals = [v for v in values if v is not None]
    if not vals:
        return UNDEFINED, UNDEFINED
    return float(np.mean(vals)), float(np.std(vals))


# --- campaigns ------------------------------------------------------------------


def run_seeds(seed, n_runs):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_runs)]


def _episode(args):
    params, fault, duration, s = args
    return simulate_episode(params, fault, duration, s)


def campaign_episodes(params: TtsParams, fault: FaultSpec, n_runs, seed, duration=800.0, jobs=1):
    """The runs of a campaign: random operation, fault per ``fault`` (injected at 401 s by default)."""
    if n_runs < 1:
        raise ValueError("need at least one run")
    tasks = [(params, fault, duration, s) for s in run_seeds(seed, n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(_episode, tasks))
    return [_episode(t) for t in tasks]


def calibration_J(model, params: TtsParams, n_runs=20, seed=10_000, window=100, duration=800.0, jobs=1):
    """Fault-free J values from independent random-operation runs."""
    eps = campaign_episodes(params, FaultSpec(), n_runs, seed, duration, jobs)
    return np.concatenate([evaluate_windows(model, ep.z, window) for ep in eps])


@dataclass
class RunResult:
    seed: int
    t_end: np.ndarray
    J: np.ndarray
    decision: np.ndarray
    label: np.ndarray
    metrics: Metrics


@dataclass
class DetectionReport:
    J_th: float
    window: int
    gamma: float
    fault: dict
    runs: list = field(default_factory=list)

    def totals(self):
        return compute_metrics(
            np.concatenate([r.decision for r in self.runs]), np.concatenate([r.label for r in self.runs])
        )

    def summary(self):
        out = {}
        for name in ("FAR", "MDR", "accuracy", "F1"):
            mean, std = summarize([getattr(r.metrics, name) for r in self.runs])
            out[name] = {"mean": mean, "std": std}
        return out

    def to_dict(self):
        return {
            "J_th": self.J_th,
            "window": self.window,
            "gamma": self.gamma,
            "fault": self.fault,
            "n_runs": len(self.runs),
            "summary": self.summary(),
            "totals": self.totals().as_dict(),
            "runs": [{"seed": r.seed, **r.metrics.as_dict()} for r in self.runs],
        }

    def windows_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "t", "J", "J_th", "decision", "label"])
            for i, r in enumerate(self.runs):
                for t, J, d, l in zip(r.t_end, r.J, r.decision, r.label):
                    w.writerow([i, f"{t:.6f}", repr(float(J)), repr(self.J_th), int(d), int(l)])


def detect_episode(model, ep, J_th, window=100):
    J = evaluate_windows(model, ep.z, window)
    dec = decide(J, J_th)
    lab = window_labels(ep.fault, window)
    return RunResult(ep.seed, ep.t[window - 1 :], J, dec, lab, compute_metrics(dec, lab))


def run_campaign(model, params: TtsParams, fault: FaultSpec, n_runs, seed, J_th, window=100, episodes=None, jobs=1):
    """Windowed detection over ``n_runs`` random-operation runs with metrics per run."""
    if episodes is None:
        episodes = campaign_episodes(params, fault, n_runs, seed, jobs=jobs)
    report = DetectionReport(float(J_th), window, float("nan"), fault.to_dict())
    for ep in episodes:
        report.runs.append(detect_episode(model, ep, J_th, window))
    return report
