"""Command line driver: generate, preprocess, train, similarity, signal, backtest, pipeline, report.

Every stage reads its inputs from the run directory and writes text
artifacts stamped with ``# cvl <version> stage=<stage> digest=<hex>``. The
digest hashes exactly the configuration sections that stage depends on, so
a later stage refuses inputs produced under a different upstream config.

Configuration is a JSON document (see ``cvl <cmd> --print-config``)
overridable by ``--set section.key=value`` and by the per-command flags.
The only environment variable read is ``CVL_OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .backtest import BacktestConfig, run_backtest
from .metrics import (
    SimilarityMatrix,
    pairwise_euclidean,
    similarity_values,
    write_similarity_blocks,
)
from .panel import SyntheticConfig, build_target, generate_synthetic, preprocess, read_panel, write_panel
from .qcml import TrainingConfig, load_model, save_model, train_ensemble
from .signals import read_signals, write_signals, build_signals
from .workflow import calibrate, euclidean_provider, mean_similarity, qcml_provider, qcml_states, training_dates

MEASURES = ("euclidean", "qcml")


class StaleInputError(RuntimeError):
    """An input artifact was produced under a different upstream configuration."""


class MissingInputError(FileNotFoundError):
    """An input artifact is absent; the named upstream stage has to run first."""


def _defaults() -> dict:
    synthetic = asdict(SyntheticConfig(n_firms=50, n_dates=600))
    synthetic.pop("seed")
    training = asdict(TrainingConfig())
    training.pop("seed")
    training["train_fraction"] = 0.3
    backtest = asdict(BacktestConfig())
    backtest["out_of_sample"] = True
    return {
        "seed": 0,
        "output_dir": "cvl-run",
        "threads": 1,
        "input_panel": None,
        "synthetic": synthetic,
        "preprocess": {"lower_pct": 1.0, "upper_pct": 99.0, "min_firms": 10},
        "target_horizon": 63,
        "training": training,
        "gamma": {"gamma_euclidean": 1.0, "gamma_qcml": 16.0, "calibrate": True, "calibration_stride": 5},
        "similarity": {"export_stride": 21},
        "signal": {"horizons": [21, 63, 126, 252], "max_missing": 0.10, "measures": list(MEASURES)},
        "backtest": backtest,
    }


DEFAULTS = _defaults()

# configuration sections each artifact depends on (cumulative along the pipeline)
_DEPS = {"generate": ("seed", "synthetic", "input_panel")}
_DEPS["preprocess"] = _DEPS["generate"] + ("preprocess", "target_horizon")
_DEPS["train"] = _DEPS["preprocess"] + ("training",)
_DEPS["gamma"] = _DEPS["train"] + ("gamma",)
_DEPS["similarity"] = _DEPS["gamma"] + ("similarity",)
_DEPS["signal"] = _DEPS["gamma"] + ("signal",)
_DEPS["backtest"] = _DEPS["signal"] + ("backtest",)

LAYOUT = {
    "generate": "raw",
    "preprocess": "panel",
    "train": "models",
    "gamma": "gamma.json",
    "similarity": "similarity",
    "signal": "signals",
    "backtest": "report",
}


# ------------------------------------------------------------------ config


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in out:
            raise KeyError(f"unknown config key {where!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, where + ".")
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise KeyError(f"unknown config section {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise KeyError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def resolve_config(config_path=None, sets=(), flags=None, env=None) -> dict:
    """Defaults, then the config file, then ``CVL_OUTPUT_DIR``, then ``--set`` pairs, then flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            cfg = _merge(cfg, json.load(fh))
    env = os.environ if env is None else env
    if env.get("CVL_OUTPUT_DIR"):
        cfg["output_dir"] = env["CVL_OUTPUT_DIR"]
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_path(cfg, key.strip(), _parse_value(value))
    for key, value in (flags or {}).items():
        if value is not None:
            _set_path(cfg, key, value)
    return cfg


def digest(cfg: dict, stage: str) -> str:
    """Stable hash of the canonical JSON of the sections ``stage`` depends on."""
    blob = json.dumps({k: cfg[k] for k in _DEPS[stage]}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header(cfg: dict, stage: str) -> str:
    return f"# cvl {__version__} stage={stage} digest={digest(cfg, stage)}"


def _header_fields(line: str) -> dict:
    return dict(part.split("=", 1) for part in line.lstrip("# ").split() if "=" in part)


def _check(path: Path, cfg: dict, stage: str, producer: str) -> None:
    if not path.exists():
        raise MissingInputError(f"{path} not found; run `cvl {producer}` first")
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            found = json.load(fh).get("header", {}).get("digest")
    else:
        with open(path, encoding="utf-8") as fh:
            found = _header_fields(fh.readline()).get("digest")
    want = digest(cfg, stage)
    if found != want:
        raise StaleInputError(f"{path} was produced under a different configuration (digest {found}, expected {want}); rerun `cvl {producer}`")


def _out(cfg: dict, stage: str) -> Path:
    return Path(cfg["output_dir"]) / LAYOUT[stage]


def _training_config(cfg: dict) -> TrainingConfig:
    t = dict(cfg["training"])
    t.pop("train_fraction")
    return TrainingConfig(seed=cfg["seed"], **t)


def _backtest_config(cfg: dict, panel, n_train: int) -> BacktestConfig:
    b = dict(cfg["backtest"])
    oos = b.pop("out_of_sample")
    for key in ("controls", "periods"):
        if b[key] is not None:
            b[key] = tuple(tuple(p) if isinstance(p, list) else p for p in b[key])
    if oos and b["start_date"] is None:
        b["start_date"] = panel.dates[n_train]
    return BacktestConfig(**b)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ------------------------------------------------------------------ stages


def cmd_generate(cfg: dict) -> Path:
    """Write the synthetic raw panel (skipped when ``input_panel`` names external data)."""
    out = _out(cfg, "generate")
    if cfg["input_panel"]:
        _log(f"generate: using external panel {cfg['input_panel']}")
        return Path(cfg["input_panel"])
    syn = SyntheticConfig(seed=cfg["seed"], **cfg["synthetic"])
    write_panel(generate_synthetic(syn), out, header(cfg, "generate"))
    return out


def _raw_panel(cfg: dict):
    if cfg["input_panel"]:
        return read_panel(cfg["input_panel"])
    raw = _out(cfg, "generate")
    _check(raw / "characteristics.csv", cfg, "generate", "generate")
    return read_panel(raw)


def cmd_preprocess(cfg: dict) -> Path:
    p = cfg["preprocess"]
    panel = preprocess(_raw_panel(cfg), p["lower_pct"], p["upper_pct"], p["min_firms"])
    panel = build_target(panel, cfg["target_horizon"])
    out = _out(cfg, "preprocess")
    write_panel(panel, out, header(cfg, "preprocess"))
    return out


def _panel(cfg: dict):
    d = _out(cfg, "preprocess")
    _check(d / "characteristics.csv", cfg, "preprocess", "preprocess")
    _check(d / "target.csv", cfg, "preprocess", "preprocess")
    return read_panel(d)


def cmd_train(cfg: dict) -> Path:
    panel = _panel(cfg)
    tc = _training_config(cfg)
    dates, _ = training_dates(panel, cfg["training"]["train_fraction"], cfg["target_horizon"])
    models = train_ensemble(panel, tc, train_dates=dates, n_jobs=int(cfg["threads"]))
    out = _out(cfg, "train")
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("member_*.json"):
        old.unlink()
    hdr = {"tool": "cvl", "version": __version__, "stage": "train", "digest": digest(cfg, "train")}
    for k, m in enumerate(models):
        save_model(m, out / f"member_{k:03d}.json", header=hdr)
    return out


def _models(cfg: dict):
    d = _out(cfg, "train")
    paths = [d / f"member_{k:03d}.json" for k in range(cfg["training"]["ensemble_size"])]
    for p in paths:
        _check(p, cfg, "train", "train")
    return [load_model(p) for p in paths]


def _gamma(cfg: dict) -> dict:
    path = _out(cfg, "gamma")
    _check(path, cfg, "gamma", "similarity")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_similarity(cfg: dict) -> Path:
    """Calibrate ``gamma_qcml`` and export similarity matrices every ``export_stride`` dates."""
    panel = _panel(cfg)
    models = _models(cfg)
    states = qcml_states(models, panel)
    g = cfg["gamma"]
    dates, n_train = training_dates(panel, cfg["training"]["train_fraction"], cfg["target_horizon"])
    gamma_q = g["gamma_qcml"]
    if g["calibrate"]:
        gamma_q = calibrate(panel, states, dates[:: g["calibration_stride"]], g["gamma_euclidean"])
    payload = {
        "header": {"tool": "cvl", "version": __version__, "stage": "gamma", "digest": digest(cfg, "gamma")},
        "gamma_euclidean": g["gamma_euclidean"],
        "gamma_qcml": gamma_q,
        "calibrated": bool(g["calibrate"]),
        "calibration_dates": [panel.dates[t] for t in dates[:: g["calibration_stride"]]],
    }
    gpath = _out(cfg, "gamma")
    gpath.parent.mkdir(parents=True, exist_ok=True)
    with open(gpath, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")

    out = _out(cfg, "similarity")
    out.mkdir(parents=True, exist_ok=True)
    avail = panel.available
    export = range(0, len(panel.dates), cfg["similarity"]["export_stride"])
    blocks = {"euclidean": [], "qcml": []}
    for t in export:
        idx = np.flatnonzero(avail[t])
        firms = [panel.firms[j] for j in idx]
        e = similarity_values(pairwise_euclidean(panel.characteristics[t, idx]), g["gamma_euclidean"])
        blocks["euclidean"].append(SimilarityMatrix(panel.dates[t], firms, e))
        blocks["qcml"].append(SimilarityMatrix(panel.dates[t], firms, mean_similarity(states, t, idx, gamma_q)))
    for name, mats in blocks.items():
        with open(out / f"{name}.txt", "w", encoding="utf-8", newline="") as fh:
            write_similarity_blocks(fh, mats, header(cfg, "similarity"))
    return out


def _signal_path(cfg: dict, measure: str) -> Path:
    return _out(cfg, "signal") / f"{measure}.csv"


def cmd_signal(cfg: dict) -> Path:
    """Spillover signals per measure; similarity is recomputed from the panel and checkpoints."""
    panel = _panel(cfg)
    gamma = _gamma(cfg)
    s = cfg["signal"]
    out = _out(cfg, "signal")
    out.mkdir(parents=True, exist_ok=True)
    for measure in s["measures"]:
        if measure == "euclidean":
            provider = euclidean_provider(panel, gamma["gamma_euclidean"])
        elif measure == "qcml":
            provider = qcml_provider(qcml_states(_models(cfg), panel), gamma["gamma_qcml"])
        else:
            raise ValueError(f"unknown similarity measure {measure!r}")
        series = build_signals(panel, provider, horizons=tuple(s["horizons"]), max_missing=s["max_missing"])
        with open(_signal_path(cfg, measure), "w", encoding="utf-8", newline="") as fh:
            write_signals(fh, list(series.values()), header(cfg, "signal"))
    return out


def _write_table(df: pd.DataFrame, path: Path, hdr: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(hdr + "\n")
        df.to_csv(fh, lineterminator="\n")


def cmd_backtest(cfg: dict) -> Path:
    panel = _panel(cfg)
    signals = {}
    for measure in cfg["signal"]["measures"]:
        path = _signal_path(cfg, measure)
        _check(path, cfg, "signal", "signal")
        for h, series in read_signals(path, panel.dates, panel.firms).items():
            signals[f"{measure}:{h}"] = series
    _, n_train = training_dates(panel, cfg["training"]["train_fraction"], cfg["target_horizon"])
    rep = run_backtest(panel, signals, _backtest_config(cfg, panel, n_train))
    out = _out(cfg, "backtest")
    out.mkdir(parents=True, exist_ok=True)
    hdr = header(cfg, "backtest")
    _write_table(rep.sharpe, out / "sharpe.csv", hdr)
    _write_table(rep.half_lives, out / "half_life.csv", hdr)
    _write_table(rep.sharpe_defined, out / "sharpe_defined.csv", hdr)
    _write_table(rep.daily_returns, out / "daily_returns.csv", hdr)
    checks = {k: float(v) if isinstance(v, float) else v for k, v in rep.checks.items()}
    with open(out / "checks.json", "w", encoding="utf-8") as fh:
        json.dump({"header": {"tool": "cvl", "version": __version__, "stage": "backtest", "digest": digest(cfg, "backtest")}, "checks": checks, "backtest_config_digest": rep.config_digest}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return out


def _read_table(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", index_col=0, float_precision="round_trip")


def cmd_report(cfg: dict) -> str:
    """Render the Sharpe and half-life tables as plain text (also written to ``report/report.txt``)."""
    d = _out(cfg, "backtest")
    for name in ("sharpe.csv", "half_life.csv", "sharpe_defined.csv"):
        _check(d / name, cfg, "backtest", "backtest")
    sharpe = _read_table(d / "sharpe.csv")
    hl = _read_table(d / "half_life.csv")
    defined = _read_table(d / "sharpe_defined.csv")
    with pd.option_context("display.width", 200, "display.max_columns", 50):
        lines = [
            header(cfg, "backtest"),
            "",
            "Annualized Sharpe ratio (period x signal)",
            sharpe.round(2).to_string(),
            "",
            "Signal half-life in days (period x signal)",
            hl.round(1).to_string(),
        ]
    undefined = [(i, c) for i in defined.index for c in defined.columns if not bool(defined.loc[i, c])]
    if undefined:
        lines += ["", "Sharpe undefined (reported as 0): " + ", ".join(f"{c} in {i}" for i, c in undefined)]
    text = "\n".join(lines) + "\n"
    with open(d / "report.txt", "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text


PIPELINE = ("generate", "preprocess", "train", "similarity", "signal", "backtest", "report")
COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "similarity": cmd_similarity,
    "signal": cmd_signal,
    "backtest": cmd_backtest,
    "report": cmd_report,
}


def cmd_pipeline(cfg: dict) -> str:
    """Every stage in order, each reading the previous stage's files from disk."""
    result = None
    for name in PIPELINE:
        t0 = time.perf_counter()
        result = COMMANDS[name](cfg)
        _log(f"{name}: {time.perf_counter() - t0:.1f}s")
    return result


COMMANDS["pipeline"] = cmd_pipeline


# --------------------------------------------------------------------- argv

_FLAGS = {
    "generate": [("--n-firms", "synthetic.n_firms", int), ("--n-dates", "synthetic.n_dates", int), ("--lead-lag-strength", "synthetic.lead_lag_strength", float)],
    "train": [("--ensemble-size", "training.ensemble_size", int), ("--epochs", "training.epochs", int), ("--dim", "training.dim", int)],
    "backtest": [("--start-date", "backtest.start_date", str), ("--end-date", "backtest.end_date", str)],
}
_FLAGS["pipeline"] = _FLAGS["generate"] + _FLAGS["train"] + _FLAGS["backtest"]

_HELP = {
    "generate": "write a synthetic panel with planted lead-lag linkages",
    "preprocess": "group-demean, z-score, winsorize; build the forward-return target",
    "train": "train the QCML ensemble and write checkpoints",
    "similarity": "calibrate gamma and export similarity matrices",
    "signal": "build spillover signals for each similarity measure",
    "backtest": "run the Markowitz backtest and write Sharpe and half-life tables",
    "report": "print the backtest tables",
    "pipeline": "run every stage in sequence",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (overrides defaults)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value (JSON-parsed); repeatable")
    common.add_argument("--output-dir", help="run directory (default from config or $CVL_OUTPUT_DIR)")
    common.add_argument("--seed", type=int, help="global seed; every per-member seed derives from it")
    common.add_argument("--threads", type=int, help="worker cap for ensemble training; results do not depend on it")
    common.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")

    parser = argparse.ArgumentParser(prog="cvl", description="Characteristic vector linkage: similarity-weighted momentum spillover signals.")
    parser.add_argument("--version", action="version", version=f"cvl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(PIPELINE[:-1]) + ["pipeline", "report"]:
        p = sub.add_parser(name, parents=[common], help=_HELP[name], description=_HELP[name])
        for flag, key, typ in _FLAGS.get(name, []):
            p.add_argument(flag, dest=key, type=typ, help=f"sets {key}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {"output_dir": args.output_dir, "seed": args.seed, "threads": args.threads}
    for flag, key, _ in _FLAGS.get(args.command, []):
        flags[key] = getattr(args, key)
    try:
        cfg = resolve_config(args.config, args.set, flags)
    except (KeyError, ValueError) as exc:
        print(f"cvl: config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        print(json.dumps(cfg, indent=1, sort_keys=True))
        return 0
    Path(cfg["output_dir"]).mkdir(parents=True, exist_ok=True)
    try:
        result = COMMANDS[args.command](cfg)
    except (StaleInputError, MissingInputError) as exc:
        print(f"cvl: {exc}", file=sys.stderr)
        return 3
    if args.command in ("report", "pipeline"):
        print(result, end="")
    else:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
