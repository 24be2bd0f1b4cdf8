"""Command-line experiment runner: ``imprecise-em run`` and ``imprecise-em sweep``."""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import labels as L
from .errors import ConfigError, ILLError
from .noise import dump_transition, transition_matrix, transition_recovery_error
from .trainer import TrainConfig, evaluate, train, write_metrics

log = logging.getLogger("imprecise_em")

TASK_DEFAULTS = {
    "supervised": {},
    "pll": {"q": 0.5},
    "ssl": {"labels": 40},
    "nll": {"eta": 0.4},
    "mixed": {"labels": 1000, "q": 0.3, "eta": 0.2},
}

DATA_DEFAULTS = {
    "C": 10, "D": 16, "n_train": 4000, "n_test": 2000, "separation": 3.0,
    "q": None, "eta": None, "labels": None, "seeds": [1, 2, 3], "data": None, "jobs": 1,
}

GRID_DEFAULTS = {"grid_l": [500, 1000, 4000], "grid_q": [0.1, 0.3, 0.5],
                 "grid_eta": [0.0, 0.1, 0.2, 0.3]}

TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name != "seed"]


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _coerce(key, value):
    """Convert a config-file string to the type its key expects."""
    if key in ("seeds", "grid_l"):
        return _ints(value) if isinstance(value, str) else [int(v) for v in value]
    if key in ("grid_q", "grid_eta"):
        return _floats(value) if isinstance(value, str) else [float(v) for v in value]
    if key in ("data", "out", "task", "arch"):
        return None if value in (None, "", "none") else str(value)
    if key in ("C", "D", "n_train", "n_test", "labels", "jobs", "epochs", "batch_size",
               "hidden", "unlabeled_ratio"):
        return None if value in (None, "", "none") else int(value)
    if key == "check_trend":
        return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
    return None if value in (None, "", "none") else float(value)


def read_config(path):
    """Plain ``key = value`` lines with ``#`` comments, or a JSON manifest."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        blob = json.loads(text)
        return dict(blob.get("settings", blob))
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="imprecise-em", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        s = sub.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--task", choices=list(TASK_DEFAULTS))
        s.add_argument("--q", type=float)
        s.add_argument("--eta", type=float)
        s.add_argument("--labels", type=int, help="label budget l")
        s.add_argument("--C", type=int)
        s.add_argument("--D", type=int)
        s.add_argument("--n-train", type=int)
        s.add_argument("--n-test", type=int)
        s.add_argument("--epochs", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--entropy-weight", type=float)
        s.add_argument("--noise-scale", type=float)
        s.add_argument("--ema", type=float)
        s.add_argument("--arch", choices=["linear", "mlp"])
        s.add_argument("--seeds", type=_ints)
        s.add_argument("--data")
        s.add_argument("--out")
        s.add_argument("--jobs", type=int)
        if name == "sweep":
            s.add_argument("--grid-l", type=_ints)
            s.add_argument("--grid-q", type=_floats)
            s.add_argument("--grid-eta", type=_floats)
            s.add_argument("--check-trend", action="store_true", default=None)
    return p


def resolve(args):
    """Merge built-in defaults < config file < flags into one flat settings dict."""
    cfg_defaults = {k: getattr(TrainConfig(), k) for k in TRAIN_KEYS}
    settings = dict(DATA_DEFAULTS)
    settings.update(cfg_defaults)
    settings["out"] = "runs"
    if args.command == "sweep":
        settings.update(GRID_DEFAULTS)
        settings["task"] = "mixed"
        settings["check_trend"] = False
    from_file = read_config(args.config) if args.config else {}
    for key, value in from_file.items():
        if key in ("command", "version"):
            continue
        if key not in settings:
            raise ConfigError(f"unknown config key {key!r}")
        settings[key] = _coerce(key, value)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        settings[key] = value
    task = settings["task"]
    if task not in TASK_DEFAULTS:
        raise ConfigError(f"unknown task {task!r}")
    for key, value in TASK_DEFAULTS[task].items():
        if settings.get(key) is None:
            settings[key] = value
    _validate(settings, args.command)
    return settings


def _validate(s, command):
    if not s["seeds"]:
        raise ConfigError("--seeds must list at least one seed")
    if s["jobs"] < 1:
        raise ConfigError("--jobs must be >= 1")
    task = s["task"]
    if command == "sweep" and task != "mixed":
        raise ConfigError("sweep runs the mixed task")
    if s["data"] is None:
        for key in ("n_train", "n_test"):
            if s[key] % s["C"]:
                raise ConfigError(f"--{key.replace('_', '-')} must be a multiple of C")
        if s["D"] < s["C"]:
            raise ConfigError("--D must be at least --C for simplex class centres")
        if command == "run" and task in ("ssl", "mixed"):
            l = s["labels"]
            if l % s["C"] or l > s["n_train"]:
                raise ConfigError("--labels must be a multiple of C and at most n-train")
    elif command == "sweep":
        raise ConfigError("sweep generates its own data; --data is not allowed")
    for key in ("q", "eta"):
        if s.get(key) is not None and not 0 <= s[key] <= 1:
            raise ConfigError(f"--{key} must lie in [0, 1]")
    train_config(s, s["seeds"][0]).validate()


def train_config(s, seed):
    return TrainConfig(seed=seed, **{k: s[k] for k in TRAIN_KEYS})


def _derive(seed, stream):
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def make_data(s, seed):
    """Training and test sets for one seed, or the ones loaded from ``--data``."""
    if s["data"]:
        train_set = L.read_dataset(s["data"])
        test_path = Path(s["data"]).with_suffix(".test.csv")
        test_set = L.read_dataset(test_path) if test_path.exists() else None
        return train_set, test_set
    base = L.make_blobs(s["n_train"], s["C"], s["D"], s["separation"], _derive(seed, 0))
    test = L.make_blobs(s["n_test"], s["C"], s["D"], s["separation"], _derive(seed, 1))
    ls = _derive(seed, 2)
    task = s["task"]
    if task == "pll":
        data = L.make_partial(base, s["q"], ls)
    elif task == "ssl":
        data = L.select_labeled_subset(base, s["labels"], ls)
    elif task == "nll":
        data = L.make_symmetric_noise(base, s["eta"], ls)
    elif task == "mixed":
        data = L.make_mixed(base, s["labels"], s["q"], s["eta"], ls)
    else:
        data = base
    return data, test


def _fingerprint(params):
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()


def run_seed(s, seed, out_dir):
    """Train one seed and write its artifacts; returns a summary dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data, test = make_data(s, seed)
    T_true = L.true_transition(data.meta, data.C)
    result = train(data, train_config(s, seed), test=test, T_true=T_true)
    write_metrics(result.metrics, out_dir / "metrics.csv")
    acc = evaluate(result.classifier, test if test is not None else data)
    summary = {
        "seed": seed,
        "arch": result.classifier.arch,
        "D": result.classifier.D,
        "C": result.classifier.C,
        "n_params": int(sum(v.size for v in result.classifier.params.values())),
        "param_sha256": _fingerprint(result.classifier.params),
        "accuracy": acc,
        "evaluated_on": "test" if test is not None else "train_true_labels",
        "epochs": len(result.metrics),
        "dataset": data.meta,
    }
    if result.noise is not None:
        dump_transition(result.noise, out_dir / "transition.json")
        if T_true is not None:
            summary["transition_tv"] = transition_recovery_error(
                transition_matrix(result.noise), T_true)
    with open(out_dir / "model.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def _std(xs):
    return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0


def _write_json(path, blob):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)


def write_manifest(s, out, command):
    blob = {"tool": "imprecise-em", "version": __version__, "command": command, "settings": s}
    _write_json(Path(out) / "manifest.json", blob)


def _run_seeds(s, out, pool=None):
    out = Path(out)
    jobs = [(s, seed, out / f"seed_{seed}") for seed in s["seeds"]]
    if pool is None:
        summaries = [run_seed(*j) for j in jobs]
    else:
        summaries = list(pool.map(run_seed, *zip(*jobs)))
    accs = [m["accuracy"] for m in summaries]
    agg = {
        "task": s["task"],
        "seeds": s["seeds"],
        "accuracy_mean": float(np.mean(accs)),
        "accuracy_std": _std(accs),
        "accuracy_per_seed": accs,
    }
    tvs = [m["transition_tv"] for m in summaries if "transition_tv" in m]
    if tvs:
        agg["transition_tv_mean"] = float(np.mean(tvs))
        agg["transition_tv_per_seed"] = tvs
    _write_json(out / "aggregate.json", agg)
    return agg


def cmd_run(s):
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(s, out, "run")
    pool = ProcessPoolExecutor(s["jobs"]) if s["jobs"] > 1 else None
    try:
        agg = _run_seeds(s, out, pool)
    finally:
        if pool is not None:
            pool.shutdown()
    log.info("accuracy %.4f +- %.4f over %d seeds", agg["accuracy_mean"], agg["accuracy_std"],
             len(s["seeds"]))
    return 0


def _cell_name(l, q, eta):
    return f"l{l}_q{q:g}_eta{eta:g}"


def _run_cell(s, l, q, eta, out):
    cell = dict(s, labels=l, q=q, eta=eta, jobs=1)
    return _run_seeds(cell, out)


def check_trend(table, etas):
    """Rows of ``(l, q) -> [(mean, std) per eta]``; accuracy may not rise by more than one pooled std."""
    failures = []
    for key, row in table.items():
        for j in range(len(etas) - 1):
            (m0, s0), (m1, s1) = row[j], row[j + 1]
            pooled = math.sqrt((s0 ** 2 + s1 ** 2) / 2.0)
            if m1 > m0 + pooled:
                failures.append({"l": key[0], "q": key[1], "eta_from": etas[j],
                                 "eta_to": etas[j + 1], "rise": m1 - m0, "pooled_std": pooled})
    return failures


def cmd_sweep(s):
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(s, out, "sweep")
    for l in s["grid_l"]:
        if l % s["C"] or l > s["n_train"]:
            raise ConfigError(f"grid label budget {l} must be a multiple of C and <= n-train")
    cells = list(itertools.product(s["grid_l"], s["grid_q"], s["grid_eta"]))
    args = [(s, l, q, eta, out / _cell_name(l, q, eta)) for l, q, eta in cells]
    if s["jobs"] > 1:
        with ProcessPoolExecutor(s["jobs"]) as pool:
            aggs = list(pool.map(_run_cell, *zip(*args)))
    else:
        aggs = [_run_cell(*a) for a in args]
    results = dict(zip(cells, aggs))
    etas = s["grid_eta"]
    table = {}
    with open(out / "summary.csv", "w", encoding="utf-8") as fh:
        header = ["l", "q"] + [f"acc_eta={e:g}" for e in etas] + [f"std_eta={e:g}" for e in etas]
        fh.write(",".join(header) + "\n")
        for l in s["grid_l"]:
            for q in s["grid_q"]:
                row = [(results[(l, q, e)]["accuracy_mean"], results[(l, q, e)]["accuracy_std"])
                       for e in etas]
                table[(l, q)] = row
                cells_out = [format(m, ".17g") for m, _ in row] + [format(sd, ".17g") for _, sd in row]
                fh.write(",".join([str(l), format(q, "g")] + cells_out) + "\n")
    if s.get("check_trend"):
        failures = check_trend(table, etas)
        _write_json(out / "trend.json", {"monotone": not failures, "failures": failures})
        if failures:
            log.error("accuracy rises with eta in %d place(s); see trend.json", len(failures))
            return 1
        log.info("accuracy is non-increasing in eta within one pooled std")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        parser.error(str(exc))
    try:
        return cmd_run(settings) if args.command == "run" else cmd_sweep(settings)
    except (ILLError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
