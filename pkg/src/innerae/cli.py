"""Command-line pipeline: simulate, train, calibrate, detect, campaign, verify, report.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 failed verification.
"""
import argparse
import copy
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import detect
from .iae import VARIANTS, AEModel, TrainConfig, train
from .numlin import NumericalError
from .suites import SUITES
from .tts import FaultSpec, TtsParams, build_dataset, simulate_episode

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3

DEFAULT_CONFIG = {
    "simulator": TtsParams().to_dict(),
    "dataset": {"samples": 100_000, "ratio": 0.7, "batch_len": 100, "seed": 0},
    "model": {"layers": 4, "hidden": 8, "latent": 2},
    "training": {"lr": 3e-3, "epochs": 150, "batch_size": 8, "patience": 100, "lam4": 0.001, "seed": 0},
    "detection": {"window": 100, "gamma": 0.05, "calibration_runs": 50, "calibration_seed": 10_000},
    "campaign": {"n_runs": 100, "seed": 1, "faults": ["sensor_gain", "stepwise"]},
    "paths": {"data_dir": "data", "model_dir": "models", "report_dir": "reports"},
}

FAULTS = {
    "none": FaultSpec,
    "sensor_gain": FaultSpec.sensor_gain,
    "stepwise": FaultSpec.stepwise,
    "leak": FaultSpec.leak,
}


class ConfigError(ValueError):
    pass


# --- configuration ----------------------------------------------------------------


def _merge(base, override, where=""):
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {where}{key} must be a mapping")
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value


def load_config(path=None, overrides=()):
    """Defaults, then the YAML file, then ``section.key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        _merge(cfg, data)
    for item in overrides:
        key, sep, raw = item.partition("=")
        parts = key.split(".")
        if not sep or len(parts) != 2:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        _merge(cfg, {parts[0]: {parts[1]: yaml.safe_load(raw)}})
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    TtsParams.from_dict(cfg["simulator"])
    ds = cfg["dataset"]
    if not 0 < ds["ratio"] <= 1:
        raise ConfigError(f"dataset.ratio must lie in (0, 1], got {ds['ratio']}")
    if ds["samples"] < ds["batch_len"] or ds["batch_len"] < 1:
        raise ConfigError("dataset.samples must cover at least one batch")
    m = cfg["model"]
    if min(m["layers"], m["hidden"], m["latent"]) < 1:
        raise ConfigError("model sizes must be positive")
    detect.DetectorConfig(cfg["detection"]["window"], cfg["detection"]["gamma"])
    for f in cfg["campaign"]["faults"]:
        if f not in FAULTS:
            raise ConfigError(f"unknown fault {f!r}; expected one of {sorted(FAULTS)}")
    if cfg["campaign"]["n_runs"] < 1:
        raise ConfigError("campaign.n_runs must be at least 1")


def config_hash(cfg):
    """Hash of everything that affects results; output locations are left out."""
    content = {k: v for k, v in cfg.items() if k != "paths"}
    return hashlib.sha256(json.dumps(content, sort_keys=True).encode()).hexdigest()[:16]


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _paths(cfg):
    return {k: Path(v) for k, v in cfg["paths"].items()}


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


# --- commands -----------------------------------------------------------------------


def cmd_simulate(cfg, args):
    ds_cfg = cfg["dataset"]
    ds = build_dataset(TtsParams.from_dict(cfg["simulator"]), ds_cfg["samples"], ds_cfg["ratio"], ds_cfg["seed"],
                       ds_cfg["batch_len"])
    out = _paths(cfg)["data_dir"]
    out.mkdir(parents=True, exist_ok=True)
    files = {"batches": ds.batches, "train_idx": ds.train_idx, "val_idx": ds.val_idx}
    for name, arr in files.items():
        np.save(out / f"{name}.npy", arr)
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": ds.seed,
        "ratio": ds_cfg["ratio"],
        "batch_len": ds_cfg["batch_len"],
        "n_batches": int(len(ds.batches)),
        "n_train": int(len(ds.train_idx)),
        "n_val": int(len(ds.val_idx)),
        "channels": ["u1", "u2", "y1", "y2"],
        "sha256": {f"{n}.npy": _sha256(out / f"{n}.npy") for n in files},
    }
    _write_json(out / "manifest.json", manifest)
    print(f"dataset: {manifest['n_train']} train / {manifest['n_val']} validation batches in {out}")
    return EXIT_OK


def load_dataset(cfg):
    d = _paths(cfg)["data_dir"]
    if not (d / "manifest.json").exists():
        raise FileNotFoundError(f"no dataset in {d}; run 'innerae simulate' first")
    batches = np.load(d / "batches.npy")
    return batches[np.load(d / "train_idx.npy")], batches[np.load(d / "val_idx.npy")]


def train_config(cfg, variant):
    t, m = cfg["training"], cfg["model"]
    return TrainConfig.for_variant(
        variant, lr=t["lr"], epochs=t["epochs"], batch_size=t["batch_size"], patience=t["patience"],
        lam4=t["lam4"], seed=t["seed"], hidden=(m["hidden"],) * m["layers"], d_v=m["latent"],
    )


def cmd_train(cfg, args):
    tr, va = load_dataset(cfg)
    meta = {"variant": args.variant, "config_hash": config_hash(cfg)}
    model, hist = train(tr, va, train_config(cfg, args.variant), meta=meta, log=None if args.quiet else _log)
    out = _paths(cfg)["model_dir"]
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / f"{args.variant}.json")
    hist.to_csv(out / f"{args.variant}_history.csv")
    last = hist.val[-1]
    print(f"{args.variant}: best epoch {model.meta['best_epoch']}, validation L1 {last.L1:.4g} L2 {last.L2:.4g} L3 {last.L3:.4g}")
    return EXIT_OK


def load_model(cfg, variant):
    path = _paths(cfg)["model_dir"] / f"{variant}.json"
    if not path.exists():
        raise FileNotFoundError(f"model file {path} not found; run 'innerae train --variant {variant}' first")
    return AEModel.load(path)


def cmd_calibrate(cfg, args):
    model = load_model(cfg, args.variant)
    det = cfg["detection"]
    J = detect.calibration_J(model, TtsParams.from_dict(cfg["simulator"]), det["calibration_runs"],
                             det["calibration_seed"], det["window"], jobs=args.jobs)
    J_th = detect.calibrate_threshold(J, det["gamma"])
    out = {"variant": args.variant, "J_th": J_th, "gamma": det["gamma"], "window": det["window"],
           "n_windows": int(J.size), "config_hash": config_hash(cfg)}
    _write_json(_paths(cfg)["report_dir"] / f"{args.variant}_threshold.json", out)
    print(f"{args.variant}: J_th = {J_th:.6g} from {J.size} fault-free windows")
    return EXIT_OK


def load_threshold(cfg, variant):
    path = _paths(cfg)["report_dir"] / f"{variant}_threshold.json"
    if not path.exists():
        raise FileNotFoundError(f"threshold file {path} not found; run 'innerae calibrate' first")
    return json.loads(path.read_text())["J_th"]


def _emit_report(cfg, rep, stem):
    rd = _paths(cfg)["report_dir"]
    d = rep.to_dict()
    d["gamma"] = cfg["detection"]["gamma"]
    d["config_hash"] = config_hash(cfg)
    _write_json(rd / f"{stem}.json", d)
    rep.windows_to_csv(rd / f"{stem}_windows.csv")
    return d


def _fmt(stat):
    return "undefined" if stat["mean"] is None else f"{stat['mean']:.3f}±{stat['std']:.3f}"


def cmd_detect(cfg, args):
    model = load_model(cfg, args.variant)
    J_th = load_threshold(cfg, args.variant)
    p = TtsParams.from_dict(cfg["simulator"])
    ep = simulate_episode(p, FAULTS[args.fault](), 800.0, args.seed)
    rep = detect.run_campaign(model, p, FAULTS[args.fault](), 1, args.seed, J_th, cfg["detection"]["window"],
                              episodes=[ep])
    d = _emit_report(cfg, rep, f"detect_{args.variant}_{args.fault}_{args.seed}")
    print(" ".join(f"{k}={_fmt(v)}" for k, v in d["summary"].items()))
    return EXIT_OK


def cmd_campaign(cfg, args):
    variants = args.variant or sorted(VARIANTS)
    faults = args.fault or cfg["campaign"]["faults"]
    p = TtsParams.from_dict(cfg["simulator"])
    c = cfg["campaign"]
    models = {v: (load_model(cfg, v), load_threshold(cfg, v)) for v in variants}
    for f in faults:
        episodes = detect.campaign_episodes(p, FAULTS[f](), c["n_runs"], c["seed"], jobs=args.jobs)
        for v, (model, J_th) in models.items():
            rep = detect.run_campaign(model, p, FAULTS[f](), c["n_runs"], c["seed"], J_th,
                                      cfg["detection"]["window"], episodes=episodes)
            d = _emit_report(cfg, rep, f"campaign_{v}_{f}")
            print(f"{v:8s} {f:12s} " + " ".join(f"{k}={_fmt(s)}" for k, s in d["summary"].items()))
    return EXIT_OK


def cmd_verify(cfg, args):
    checks, seconds = SUITES[args.suite]()
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    print(f"suite {args.suite}: {'PASS' if ok else 'FAIL'} in {seconds:.1f} s")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_report(cfg, args):
    rd = _paths(cfg)["report_dir"]
    files = sorted(rd.glob("campaign_*.json"))
    if not files:
        raise FileNotFoundError(f"no campaign reports in {rd}")
    rows = []
    for path in files:
        d = json.loads(path.read_text())
        v, f = _split_stem(path.stem)
        rows.append({"variant": v, "fault": f, "n_runs": d["n_runs"], "J_th": d["J_th"], **d["summary"]})
    lines = ["| variant | fault | runs | J_th | FAR | MDR | accuracy | F1 |", "|---|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['variant']} | {r['fault']} | {r['n_runs']} | {r['J_th']:.4g} | "
                     + " | ".join(_fmt(r[k]) for k in ("FAR", "MDR", "accuracy", "F1")) + " |")
    text = "\n".join(lines) + "\n"
    (rd / "summary.md").write_text(text)
    _write_json(rd / "summary.json", rows)
    print(text, end="")
    return EXIT_OK


def _split_stem(stem):
    rest = stem[len("campaign_"):]
    for v in sorted(VARIANTS, key=len, reverse=True):
        if rest.startswith(v + "_"):
            return v, rest[len(v) + 1:]
    raise ValueError(f"cannot parse campaign report name {stem!r}")


# --- entry point ----------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="innerae", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for simulations")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate the fault-free training dataset")
    p = sub.add_parser("train", parents=[common], help="train one autoencoder variant")
    p.add_argument("--variant", choices=sorted(VARIANTS), required=True)
    p.add_argument("--quiet", action="store_true")
    p = sub.add_parser("calibrate", parents=[common], help="threshold from fault-free runs")
    p.add_argument("--variant", choices=sorted(VARIANTS), required=True)
    p = sub.add_parser("detect", parents=[common], help="windowed detection on one run")
    p.add_argument("--variant", choices=sorted(VARIANTS), required=True)
    p.add_argument("--fault", choices=sorted(FAULTS), default="sensor_gain")
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("campaign", parents=[common], help="repeated detection runs with metrics")
    p.add_argument("--variant", choices=sorted(VARIANTS), action="append")
    p.add_argument("--fault", choices=sorted(FAULTS), action="append")
    p = sub.add_parser("verify", parents=[common], help="analytic verification suite")
    p.add_argument("--suite", choices=sorted(SUITES), required=True)
    sub.add_parser("report", parents=[common], help="table of all campaign reports")
    return ap


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "campaign": cmd_campaign,
    "verify": cmd_verify,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg, args)
    except NumericalError as e:
        _log(f"numerical failure: {e}")
        return EXIT_NUMERICAL
    except (ValueError, TypeError, FileNotFoundError, KeyError, yaml.YAMLError) as e:
        _log(f"error: {e}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
