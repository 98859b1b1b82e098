"""Command-line entry point: ``cla synth | run | trace``."""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .backtest import backtest_run
from .base_model import TrainConfig
from .data import RegimeSpec, generate_synthetic_regimes, load_panel, write_panel
from .engine import EngineConfig, EngineError, run
from .recall import MODES
from .similarity import DtwConfig

log = logging.getLogger("cla")

DEFAULTS = {
    "engine": {
        "mode": "simweight",
        "horizon": "12",
        "stride": "6",
        "train_window": "1",
        "burn_in": "0",
        "replay_window": "",
        "capacity": "",
        "seed": "0",
        "winsor_lower": "0.01",
        "winsor_upper": "0.99",
    },
    "train": {
        "hidden": "8",
        "activation": "tanh",
        "learning_rate": "0.05",
        "max_epochs": "400",
        "patience": "50",
        "split": "0.75,0.05,0.25",
    },
    "dtw": {
        "band_width": "",
        "samples": "100",
    },
    "backtest": {
        "decile": "0.1",
        "periods_per_year": "12",
    },
}

REGIME_DEFAULTS = {
    "n_regimes": "3",
    "regime_length": "12",
    "regime_sequence": "0,1,2,0,1,2",
    "n_securities": "100",
    "n_features": "8",
    "noise_sd": "0.1",
    "feature_shift": "1.0",
}


class ConfigError(ValueError):
    pass


class TraceError(ValueError):
    pass


# ---------------------------------------------------------------- config

def read_config(path=None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} not found")
        cp.read(path, encoding="utf-8")
    return cp


def _get(cp, section, key, conv, optional=False):
    raw = cp.get(section, key, fallback="").strip()
    if raw == "":
        if optional:
            return None
        raise ConfigError(f"missing key {key!r} in [{section}]")
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def _ints(raw: str) -> list[int]:
    return [int(v) for v in raw.replace(" ", "").split(",") if v]


def _floats(raw: str) -> list[float]:
    return [float(v) for v in raw.replace(" ", "").split(",") if v]


def engine_config(cp, mode=None, seed=None) -> EngineConfig:
    e = "engine"
    train = TrainConfig(
        hidden=tuple(_get(cp, "train", "hidden", _ints)),
        activation=_get(cp, "train", "activation", str),
        learning_rate=_get(cp, "train", "learning_rate", float),
        max_epochs=_get(cp, "train", "max_epochs", int),
        patience=_get(cp, "train", "patience", int),
        split=tuple(_get(cp, "train", "split", _floats)),
    )
    dtw = DtwConfig(
        band_width=_get(cp, "dtw", "band_width", int, optional=True),
        sample_count=_get(cp, "dtw", "samples", int),
    )
    try:
        return EngineConfig(
            mode=mode or _get(cp, e, "mode", str),
            train=train,
            dtw=dtw,
            horizon=_get(cp, e, "horizon", int),
            stride=_get(cp, e, "stride", int),
            train_window=_get(cp, e, "train_window", int),
            burn_in=_get(cp, e, "burn_in", int),
            replay_window=_get(cp, e, "replay_window", int, optional=True),
            capacity=_get(cp, e, "capacity", int, optional=True),
            winsor=(_get(cp, e, "winsor_lower", float), _get(cp, e, "winsor_upper", float)),
            seed=_get(cp, e, "seed", int) if seed is None else seed,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"engine: {exc}") from None


def regime_spec(cp) -> RegimeSpec:
    s = "regimes"
    if not cp.has_section(s):
        raise ConfigError("config has no [regimes] section")
    for k, v in REGIME_DEFAULTS.items():
        if not cp.has_option(s, k):
            cp.set(s, k, v)
    n_regimes = _get(cp, s, "n_regimes", int)
    maps = [cp.get(s, f"map_{r}", fallback="") for r in range(n_regimes)]
    means = [cp.get(s, f"mean_{r}", fallback="") for r in range(n_regimes)]
    try:
        return RegimeSpec(
            n_regimes=n_regimes,
            regime_length=_get(cp, s, "regime_length", int),
            regime_sequence=_get(cp, s, "regime_sequence", _ints),
            n_securities=_get(cp, s, "n_securities", int),
            n_features=_get(cp, s, "n_features", int),
            seed=_get(cp, s, "seed", int),
            noise_sd=_get(cp, s, "noise_sd", float),
            feature_shift=_get(cp, s, "feature_shift", float),
            maps=[_floats(m) for m in maps] if all(maps) else None,
            feature_means=[_floats(m) for m in means] if all(means) else None,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"regimes: {exc}") from None


def render_config(cp) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------- output helpers

def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _publish(tmp, path) -> None:
    # mkstemp creates 0600 files; give the result ordinary permissions
    os.chmod(tmp, 0o666 & ~_umask())
    os.replace(tmp, path)


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        _publish(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else v for v in r])
    return buf.getvalue()


def _clean(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, default=_clean) + "\n"


# ---------------------------------------------------------------- synth

def cmd_synth(config_path, out_path) -> Path:
    spec = regime_spec(read_config(config_path))
    dataset, boundaries = generate_synthetic_regimes(spec)
    out = Path(out_path)
    fd, tmp = tempfile.mkstemp(dir=out.parent if str(out.parent) else ".", suffix=".tmp")
    os.close(fd)
    try:
        write_panel(dataset, tmp)
        _publish(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    maps, means = spec.resolved()
    sidecar = {
        "boundaries": boundaries,
        "labels": spec.labels().tolist(),
        "maps": maps.tolist(),
        "feature_means": means.tolist(),
        "regime_sequence": spec.regime_sequence,
        "regime_length": spec.regime_length,
    }
    atomic_write(sidecar_path(out), _dumps(sidecar))
    return out


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".regimes.json")


# ---------------------------------------------------------------- run

STAT_FIELDS = [
    "tr", "sd", "sharpe", "rr", "tracking_sd", "ir", "hit_rate",
    "sign_test_p", "sharpe_t_p", "ir_t_p", "cla_mae", "base_mae", "memories",
]


def _one_run(args):
    k, seed, cfg_text, mode, data_path, out_dir = args
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(cfg_text)
    cfg = engine_config(cp, mode=mode, seed=seed)
    decile = _get(cp, "backtest", "decile", float)
    ppy = _get(cp, "backtest", "periods_per_year", float)
    dataset = load_panel(data_path)
    result = run(dataset, cfg)
    bt = backtest_run(result, dataset, cfg.stride, ppy, decile)

    trace = result.to_dict()
    trace["run"] = {"index": k, "seed": seed}
    trace["backtest"] = {
        "periods": bt.periods,
        "cla": bt.cla.tolist(),
        "base": bt.base.tolist(),
        "stats": bt.stats.to_dict(),
    }
    run_dir = Path(out_dir) / f"run_{k:03d}"
    atomic_write(run_dir / "trace.json", _dumps(trace))
    rows = []
    for tr in result.forecast_traces:
        y = result.targets[tr.step]
        for i, sec in enumerate(tr.securities):
            rows.append([tr.period, sec, repr(float(tr.forecast[i])), repr(float(tr.base_forecast[i])),
                         "" if not np.isfinite(y[i]) else repr(float(y[i]))])
    atomic_write(run_dir / "forecasts.csv",
                 _csv_text(["period", "security_id", "cla_forecast", "base_forecast", "target"], rows))

    st = bt.stats.to_dict()
    st.update(cla_mae=result.mae("cla"), base_mae=result.mae("base"), memories=result.memory_count)
    return {"run": k, "seed": seed, **{f: _clean(st[f]) for f in STAT_FIELDS}}


def cmd_run(config_path, data_path, runs: int, out_dir, mode=None, jobs: int = 1, seed=None) -> dict:
    cp = read_config(config_path)
    cfg = engine_config(cp, mode=mode, seed=seed)  # validates before any work
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_text = render_config(cp)
    # run k is reproducible in isolation: its seed is master + k
    tasks = [(k, cfg.seed + k, cfg_text, cfg.mode, str(data_path), str(out_dir)) for k in range(runs)]
    if jobs > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_one_run, tasks))
    else:
        rows = [_one_run(t) for t in tasks]

    aggregate = {}
    for name, fn in (("min", np.min), ("max", np.max), ("mean", np.mean), ("median", np.median)):
        agg = {}
        for f in STAT_FIELDS:
            vals = [r[f] for r in rows if r[f] is not None]
            agg[f] = _clean(fn(vals)) if vals else None
        aggregate[name] = agg

    header = ["run", "seed", *STAT_FIELDS]
    table = [[r["run"], r["seed"], *[r[f] for f in STAT_FIELDS]] for r in rows]
    table += [[name, "", *[aggregate[name][f] for f in STAT_FIELDS]] for name in aggregate]
    atomic_write(out_dir / "stats.csv", _csv_text(header, table))
    summary = {
        "mode": cfg.mode,
        "master_seed": cfg.seed,
        "runs": runs,
        "data": Path(data_path).name,
        "per_run": rows,
        "aggregate": aggregate,
        "config": {s: dict(cp[s]) for s in cp.sections()},
    }
    atomic_write(out_dir / "summary.json", _dumps(summary))
    return summary


# ---------------------------------------------------------------- trace report

_STEP_KEYS = ("period", "columns", "weights", "winner")


def read_trace(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TraceError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("steps"), list):
        raise TraceError(f"{path}: missing 'steps' list")
    for i, rec in enumerate(doc["steps"]):
        if not isinstance(rec, dict):
            raise TraceError(f"record {i}: not an object")
        missing = [k for k in _STEP_KEYS if k not in rec]
        if missing:
            raise TraceError(f"record {i}: missing {', '.join(missing)}")
        if rec["weights"] is not None and len(rec["weights"]) != len(rec["columns"]):
            raise TraceError(f"record {i}: {len(rec['weights'])} weights for {len(rec['columns'])} columns")
    return doc


def cmd_trace(trace_path, out_dir) -> tuple[Path, Path]:
    """Write the per-period weight table and the cumulative value series."""
    doc = read_trace(trace_path)
    steps = [s for s in doc["steps"] if s["weights"] is not None]
    names = ["base"]
    for s in steps:
        for c in s["columns"]:
            if c not in names:
                names.append(c)
    rows = []
    for s in steps:
        w = dict(zip(s["columns"], s["weights"]))
        rows.append([s["period"], s["winner"], *[w.get(n) for n in names]])
    out_dir = Path(out_dir)
    weights_path = out_dir / "weights.csv"
    atomic_write(weights_path, _csv_text(["period", "winner", *names], rows))

    bt = doc.get("backtest") or {"periods": [], "cla": [], "base": []}
    value_rows = []
    cla_v = base_v = 1.0
    for p, rc, rb in zip(bt["periods"], bt["cla"], bt["base"]):
        cla_v *= 1.0 + rc
        base_v *= 1.0 + rb
        value_rows.append([p, repr(cla_v), repr(base_v)])
    value_path = out_dir / "value.csv"
    atomic_write(value_path, _csv_text(["period", "cla_value", "base_value"], value_rows))
    return weights_path, value_path


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cla", description="Continual learning augmentation toolkit")
    p.add_argument("command", choices=["synth", "run", "trace"], nargs="?")
    p.add_argument("--config", help="sectioned key-value config file")
    p.add_argument("--data", help="CSV panel (run) or trace JSON (trace)")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output file (synth) or directory (run, trace)")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.print_config:
            cp = read_config(args.config)
            if args.mode:
                cp.set("engine", "mode", args.mode)
            if args.seed is not None:
                cp.set("engine", "seed", str(args.seed))
            sys.stdout.write(render_config(cp))
            return 0
        if args.command is None:
            build_parser().print_usage(sys.stderr)
            return 2
        if not args.out:
            raise ConfigError("--out is required")
        if args.command == "synth":
            out = cmd_synth(args.config, args.out)
            log.info("wrote %s", out)
        elif args.command == "run":
            if not args.data:
                raise ConfigError("--data is required for run")
            summary = cmd_run(args.config, args.data, args.runs, args.out, args.mode, args.jobs, args.seed)
            log.info("completed %d runs", summary["runs"])
        else:
            if not args.data:
                raise ConfigError("--data (trace JSON) is required for trace")
            cmd_trace(args.data, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (EngineError, TraceError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
