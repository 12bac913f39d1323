"""Command-line entry point: ``actpv <command> [options]``.

Every command writes ``run.json`` (command + resolved options) into its
output directory; ``actpv replay run.json --out DIR`` re-executes it.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training or
numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import read_config
from .ensemble import (
    PredictionMatrix,
    RandomnessSetting,
    file_sha256,
    load_ensemble,
    predict_matrix,
    read_manifest,
    save_ensemble,
    train_ensemble,
)
from .errors import ActPVError, ConfigurationError, InputError
from .estimator import compare_pv, mc_dropout_pv, write_confusion, write_report
from .metrics import settings_row, target_metrics, temperature_sweep, write_settings_table
from .nn import spec_for_schema, train_config_for
from .nn.spec import TEMPERATURE_GRID
from .pipeline import estimator_split, fit_variation_estimator, load_task_data, task_kind_for
from .variation import PVTable, correlation_matrix, pv_table, size_sweep, write_labeled_matrix

log = logging.getLogger("actpv")


def _floats(s):
    return [float(x) for x in str(s).split(",") if x.strip()]


def _ints(s):
    return [int(x) for x in str(s).split(",") if x.strip()]


def _strs(s):
    return [x.strip() for x in str(s).split(",") if x.strip()]


def _opt_float(s):
    return None if s in (None, "", "none", "None") else float(s)


# name -> (type, default, help, choices); a default of ... marks a required option
OPTIONS = {
    "prepare-data": {
        "source": (str, "synthetic", "movielens | synthetic | synthetic-movielens",
                   ("movielens", "synthetic", "synthetic-movielens")),
        "ml_dir": (str, None, "directory holding ratings.dat, users.dat, movies.dat", None),
        "rows": (int, 100_000, "rows to generate for synthetic sources", None),
        "users": (int, 1500, "users for synthetic-movielens", None),
        "movies": (int, 1200, "movies for synthetic-movielens", None),
        "limit": (int, 0, "keep only the first N ratings (0 = all)", None),
        "seed": (int, 0, "seed for generation and splitting", None),
        "splits": (_floats, [0.6, 0.4], "train/test fractions", None),
        "estimator_split": (int, 0, "1 = also write est_train/est_test halves of the test part", None),
        "out": (str, ..., "output directory", None),
    },
    "run-ensemble": {
        "task": (str, ..., "ml-r | ml-c | synth-binary", ("ml-r", "ml-c", "synth-binary")),
        "data": (str, ..., "prepare-data output directory", None),
        "setting": (_strs, ["R3"], "randomness setting code(s), comma separated", None),
        "n": (int, 30, "ensemble size", None),
        "master_seed": (int, 0, "master seed for all member seeds", None),
        "workers": (int, 1, "parallel member training processes", None),
        "max_epochs": (int, None, "override the task preset", None),
        "batch_size": (int, None, "override the task preset", None),
        "learning_rate": (float, None, "override the task preset", None),
        "patience": (int, None, "override the task preset", None),
        "temperature": (_opt_float, None, "multiclass temperature (default 0.2)", None),
        "jackknife_seed": (int, 0, "seed of the fixed fold assignment", None),
        "out": (str, ..., "output directory", None),
    },
    "correlate": {
        "pv_tables": (_strs, ..., "PV table files, comma separated", None),
        "labels": (_strs, None, "labels for the tables (default: file stems)", None),
        "out": (str, ..., "output directory", None),
    },
    "fit-estimator": {
        "ensemble": (str, ..., "run-ensemble setting directory", None),
        "data": (str, ..., "prepare-data output directory", None),
        "task": (str, None, "task (default: read from the ensemble run)", None),
        "objective": (str, "reg", "reg | cls", ("reg", "cls")),
        "features": (str, "BV", "B | BV", ("B", "BV")),
        "seed": (int, 0, "estimator seed", None),
        "split_seed": (int, 0, "seed of the 50/50 split of the test rows", None),
        "target_member": (int, 0, "ensemble member used as the target model", None),
        "buckets": (int, 5, "number of PV buckets (cls)", None),
        "max_epochs": (int, 150, "estimator epochs", None),
        "dump_features": (int, 0, "1 = write features.npz", None),
        "out": (str, ..., "output directory", None),
    },
    "delta-ratio": {
        "universe": (str, ..., "run-ensemble setting directory of the model universe", None),
        "sizes": (_ints, [10, 30, 60, 100], "sub-ensemble sizes", None),
        "resamples": (int, 20, "resamples per size", None),
        "seed": (int, 0, "sampling seed", None),
        "out": (str, ..., "output directory", None),
    },
    "dropout-baseline": {
        "ensemble": (str, ..., "run-ensemble setting directory (ground-truth PV)", None),
        "data": (str, ..., "prepare-data output directory", None),
        "task": (str, None, "task (default: read from the ensemble run)", None),
        "rate": (float, 0.2, "dropout rate on the ReLU layers", None),
        "passes": (int, 100, "stochastic inference passes", None),
        "seed": (int, 0, "seed for training and masks", None),
        "split_seed": (int, 0, "seed of the 50/50 split of the test rows", None),
        "estimator": (str, None, "fit-estimator output to compare against", None),
        "out": (str, ..., "output directory", None),
    },
    "temperature-sweep": {
        "data": (str, ..., "prepare-data output directory (MovieLens)", None),
        "grid": (_floats, list(TEMPERATURE_GRID), "temperatures", None),
        "seed": (int, 0, "seed for the shared init/shuffle seeds", None),
        "max_epochs": (int, None, "override the task preset", None),
        "out": (str, ..., "output directory", None),
    },
}

# execution details that never change numeric outputs
NON_SEMANTIC = ("out", "workers")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="actpv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=argparse.SUPPRESS, help="key = value file")
        for name, (typ, default, help_, choices) in opts.items():
            extra = {"choices": choices} if choices else {}
            shown = "required" if default is ... else f"default: {default}"
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ,
                           default=argparse.SUPPRESS, help=f"{help_} ({shown})", **extra)
    r = sub.add_parser("replay")
    r.add_argument("run", help="run.json written by an earlier command")
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, default=None)
    return parser


def resolve(cmd: str, given: dict) -> dict:
    """Defaults, then config file values, then explicit flags."""
    opts = OPTIONS[cmd]
    values = {k: v[1] for k, v in opts.items()}
    if "config" in given:
        for key, raw in read_config(given["config"]).items():
            if key not in opts:
                raise ConfigurationError(f"unknown option {key!r} in config for {cmd}")
            typ, _, _, choices = opts[key]
            val = typ(raw)
            if choices and val not in choices:
                raise ConfigurationError(f"{key} must be one of {choices}")
            values[key] = val
    values.update({k: v for k, v in given.items() if k != "config"})
    missing = [k for k, v in values.items() if v is ...]
    if missing:
        raise ConfigurationError("missing required option(s): " + ", ".join(
            "--" + m.replace("_", "-") for m in missing))
    return values


def _semantic(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in NON_SEMANTIC}


def _write_json(path, obj) -> None:
    write_report(path, obj)


def _hashes(paths) -> dict:
    return {str(p): file_sha256(p) for p in paths}


def _rel_hashes(base: Path, names) -> dict:
    return {n: file_sha256(base / n) for n in names if (base / n).exists()}


# ------------------------------------------------------------------ commands


def cmd_prepare_data(cfg: dict) -> None:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    src = cfg["source"]
    if src == "movielens":
        if not cfg["ml_dir"]:
            raise ConfigurationError("--ml-dir is required for --source movielens")
        d = Path(cfg["ml_dir"])
        for f in ("ratings.dat", "users.dat", "movies.dat"):
            if not (d / f).exists():
                raise InputError(f"{d / f} not found")
        ds = data_mod.load_movielens_dir(d)
    elif src == "synthetic-movielens":
        ml_dir = data_mod.write_synthetic_movielens(out / "ml", cfg["rows"], cfg["users"],
                                                    cfg["movies"], cfg["seed"])
        ds = data_mod.load_movielens_dir(ml_dir)
    else:
        ds = data_mod.gen_synthetic_binary(cfg["rows"], seed=cfg["seed"])
    if cfg["limit"]:
        ds = ds.head(cfg["limit"])
    ds.validate()
    parts = data_mod.split(ds, cfg["splits"], cfg["seed"],
                           names=["train", "test"] + [f"part{i}" for i in range(2, len(cfg["splits"]))])
    files = []
    for part in parts:
        name = f"{part.provenance['split_name']}.tsv"
        data_mod.dump_dataset(part, out / name)
        files.append(name)
    if cfg["estimator_split"] and len(parts) >= 2:
        for part in data_mod.split(parts[1], [0.5, 0.5], cfg["seed"], names=["est_train", "est_test"]):
            name = f"{part.provenance['split_name']}.tsv"
            data_mod.dump_dataset(part, out / name)
            files.append(name)
    _write_json(out / "provenance.json", {
        "config": _semantic(cfg), "rows": len(ds),
        "parts": {f: len(data_mod.load_dataset(out / f)) for f in files},
        "sha256": _rel_hashes(out, files),
    })


def _train_config(cfg: dict, task_kind: str):
    overrides = {k: cfg[k] for k in ("max_epochs", "batch_size", "learning_rate", "patience")
                 if cfg.get(k) is not None}
    return train_config_for(task_kind, **overrides)


def cmd_run_ensemble(cfg: dict) -> None:
    out = Path(cfg["out"])
    task = cfg["task"]
    train, test = load_task_data(cfg["data"], task)
    kind = task_kind_for(task)
    spec = spec_for_schema(train.schema, temperature=cfg["temperature"])
    tconf = _train_config(cfg, kind)
    data_hashes = _rel_hashes(Path(cfg["data"]), ["train.tsv", "test.tsv"])
    rows = []
    for code in cfg["setting"]:
        setting = RandomnessSetting.from_code(code)
        sdir = out / setting.code
        log.info("training %s ensemble of %d on %d rows", setting.code, cfg["n"], len(train))
        ens = train_ensemble(spec, tconf, train, setting, cfg["n"], cfg["master_seed"],
                             workers=cfg["workers"], jackknife_seed=cfg["jackknife_seed"])
        save_ensemble(ens, sdir, extra={"task": task, "data_sha256": data_hashes})
        matrix = predict_matrix(ens, test)
        matrix.to_file(sdir / "predictions.npz")
        pv = pv_table(matrix, kind)
        pv.to_file(sdir / "pv.tsv")
        row = settings_row(setting.label, matrix, pv, test.labels, kind)
        rows.append(row)
        _write_json(sdir / "metrics.json", {
            "config": _semantic(cfg), "setting": setting.code, "task": task,
            "metrics": row, "pv_summary": pv.summary(),
            "inputs": data_hashes,
            "outputs": _rel_hashes(sdir, ["manifest.json", "predictions.npz", "pv.tsv"]),
        })
    write_settings_table(out / "settings.tsv", rows, kind)


def cmd_correlate(cfg: dict) -> None:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    paths = cfg["pv_tables"]
    labels = cfg["labels"] or [Path(p).parent.name if Path(p).stem == "pv" else Path(p).stem for p in paths]
    if len(labels) != len(paths):
        raise ConfigurationError("one label per PV table")
    tables = {lab: PVTable.from_file(p) for lab, p in zip(labels, paths)}
    ref = set(tables[labels[0]].row_ids.tolist())
    for lab in labels[1:]:
        if set(tables[lab].row_ids.tolist()) != ref:
            raise InputError(f"PV table {lab!r} covers different row ids")
    names, mat = correlation_matrix(tables)
    write_labeled_matrix(out / "correlation.tsv", names, mat, "# actpv-correlation v1")
    _write_json(out / "report.json", {"config": _semantic(cfg), "labels": names,
                                      "pearson": mat, "inputs": _hashes(paths)})


def _ensemble_task(ens_dir: Path, cfg_task):
    manifest = read_manifest(ens_dir)
    return cfg_task or manifest.get("task"), manifest


def _estimator_inputs(cfg: dict):
    ens_dir = Path(cfg["ensemble"])
    task, manifest = _ensemble_task(ens_dir, cfg.get("task"))
    if task is None:
        raise ConfigurationError("--task is required (ensemble manifest has none)")
    _, test = load_task_data(cfg["data"], task)
    pv = PVTable.from_file(ens_dir / "pv.tsv")
    return ens_dir, task, manifest, test, pv


def cmd_fit_estimator(cfg: dict) -> None:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ens_dir, task, manifest, test, pv = _estimator_inputs(cfg)
    ens = load_ensemble(ens_dir)
    if not 0 <= cfg["target_member"] < ens.N:
        raise ConfigurationError(f"target member {cfg['target_member']} outside [0, {ens.N})")
    d1, d2, pv1, pv2 = estimator_split(test, pv, cfg["split_seed"])
    run = fit_variation_estimator(
        ens.spec, ens.members[cfg["target_member"]], d1, d2, pv1, pv2,
        objective=cfg["objective"], feature_mode=cfg["features"], seed=cfg["seed"],
        n_buckets=cfg["buckets"], estimator_params={"max_epochs": cfg["max_epochs"]})
    run.model.save(out / "estimator.npz")
    run.stats.to_file(out / "neuron_stats.tsv")
    if cfg["objective"] == "cls":
        write_confusion(out / "confusion.tsv", run.report["confusion"])
        pred_col = run.test_prediction.argmax(axis=1) + 1
    else:
        pred_col = run.test_prediction
    lines = ["# actpv-estimates v1", "row_id\tpv\testimate"]
    lines += [f"{int(r)}\t{float(a)!r}\t{b!r}" for r, a, b in
              zip(d2.row_ids, pv2.pv, pred_col.tolist())]
    (out / "estimates.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if cfg["dump_features"]:
        from .probe import activation_features, write_feature_matrix
        for name, part in (("features_est_train.npz", d1), ("features_est_test.npz", d2)):
            X = activation_features(ens.members[cfg["target_member"]], ens.spec, run.stats, part, cfg["features"])
            write_feature_matrix(out / name, part.row_ids, X)
    _write_json(out / "report.json", {
        "config": _semantic(cfg), "task": task, "setting": manifest["setting"],
        "feature_mode": cfg["features"], "objective": cfg["objective"],
        "seeds": {"estimator": cfg["seed"], "split": cfg["split_seed"],
                  "target_member": manifest["members"][cfg["target_member"]]["seeds"]},
        "metrics": run.report, "n_train": len(d1), "n_test": len(d2),
        "inputs": {"pv.tsv": file_sha256(ens_dir / "pv.tsv"),
                   "manifest.json": file_sha256(ens_dir / "manifest.json")},
        "outputs": _rel_hashes(out, ["estimator.npz", "neuron_stats.tsv", "estimates.tsv"]),
    })


def cmd_delta_ratio(cfg: dict) -> None:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    udir = Path(cfg["universe"])
    matrix = PredictionMatrix.from_file(udir / "predictions.npz")
    points = size_sweep(matrix, cfg["sizes"], cfg["resamples"], cfg["seed"])
    lines = ["# actpv-delta-ratio v1", "size\tmean\tstd\tresamples"]
    lines += [f"{p.size}\t{p.mean!r}\t{p.std!r}\t{len(p.values)}" for p in points]
    (out / "delta_ratio.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_json(out / "report.json", {
        "config": _semantic(cfg), "universe_size": matrix.N,
        "points": [{"size": p.size, "mean": p.mean, "std": p.std, "values": p.values} for p in points],
        "inputs": {"predictions.npz": file_sha256(udir / "predictions.npz")},
    })


def cmd_dropout_baseline(cfg: dict) -> None:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ens_dir, task, manifest, test, pv = _estimator_inputs(cfg)
    ens = load_ensemble(ens_dir)
    train, _ = load_task_data(cfg["data"], task)
    dpv = mc_dropout_pv(ens.spec, ens.config, train, test, cfg["rate"], cfg["passes"], cfg["seed"])
    dpv.to_file(out / "dropout_pv.tsv")
    _, d2, _, pv2 = estimator_split(test, pv, cfg["split_seed"])
    report = {
        "config": _semantic(cfg), "task": task, "setting": manifest["setting"],
        "all_test_rows": compare_pv(dpv, pv),
        "estimator_test_rows": {"dropout": compare_pv(dpv.select(d2.row_ids), pv2)},
        "inputs": {"pv.tsv": file_sha256(ens_dir / "pv.tsv")},
        "outputs": _rel_hashes(out, ["dropout_pv.tsv"]),
    }
    if cfg["estimator"]:
        est = np.loadtxt(Path(cfg["estimator"]) / "estimates.tsv", comments="#", skiprows=2, ndmin=2)
        est_table = PVTable(est[:, 0].astype(np.int64), est[:, 2], np.zeros(len(est)))
        report["estimator_test_rows"]["activation_estimator"] = compare_pv(
            est_table.aligned_to(d2.row_ids), pv2)
    _write_json(out / "report.json", report)


def cmd_temperature_sweep(cfg: dict) -> None:
    from .ensemble import make_seed_bundles

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    train, test = load_task_data(cfg["data"], "ml-c")
    spec = spec_for_schema(train.schema)
    tconf = _train_config(cfg, "multiclass")
    seeds = make_seed_bundles(RandomnessSetting.from_code("R3"), 1, cfg["seed"])[0]
    results, best = temperature_sweep(spec, tconf, train, test, cfg["grid"], seeds)
    _write_json(out / "report.json", {"config": _semantic(cfg),
                                      "results": {repr(t): r for t, r in results.items()},
                                      "selected": best})


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "run-ensemble": cmd_run_ensemble,
    "correlate": cmd_correlate,
    "fit-estimator": cmd_fit_estimator,
    "delta-ratio": cmd_delta_ratio,
    "dropout-baseline": cmd_dropout_baseline,
    "temperature-sweep": cmd_temperature_sweep,
}


def execute(cmd: str, cfg: dict) -> None:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    COMMANDS[cmd](cfg)
    _write_json(out / "run.json", {"command": cmd, "config": cfg})


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            with open(args.run, encoding="utf-8") as fh:
                run = json.load(fh)
            cmd = run["command"]
            cfg = resolve(cmd, run["config"])
            cfg["out"] = args.out
            if args.workers is not None and "workers" in cfg:
                cfg["workers"] = args.workers
        else:
            given = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
            cmd = args.command
            cfg = resolve(cmd, given)
        execute(cmd, cfg)
    except ActPVError as exc:
        print(f"actpv: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"actpv: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"actpv: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
