"""Command-line driver.

Subcommands: simulate, train, grid, impute, evaluate, report. Every config
key is also a flag (``--training.epochs 50``); flags and ``--set
section.key=value`` override the TOML file given with ``--config``.

Exit codes: 0 success, 1 failure of some or all work, 2 invalid config.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import DEFAULTS, ConfigError, load_config, parse_override
from .dataio import (
    DataFormatError,
    apply_standardization,
    load_csv,
    split,
    standardize,
    write_matrix_csv,
    write_split,
)
from .evaluate import CollinearityError, SeparationError, average_l1, logistic_fit
from .experiment import fit, run_experiment, train_config
from .imputation import impute, mean_impute
from .networks import ModelParams
from .simulate import SimSpec, SimulationError, simulate, write_simulation
from .training import GridSearchError, TrainingDiverged, default_grid, grid_search

logger = logging.getLogger("nimiwae")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _add_config_flags(p: argparse.ArgumentParser, sections):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    for section in sections:
        group = p.add_argument_group(f"[{section}] keys")
        for key in DEFAULTS[section]:
            group.add_argument(f"--{section}.{key}", dest=f"cfg__{section}__{key}", metavar="VALUE")


def _config(args) -> dict:
    overrides = [parse_override(s) for s in args.set]
    for name, raw in vars(args).items():
        if name.startswith("cfg__") and raw is not None:
            _, section, key = name.split("__", 2)
            overrides.append(parse_override(f"{section}.{key}={raw}"))
    return load_config(args.config, overrides)


def _read_data(cfg: dict, path):
    d = cfg["data"]
    return load_csv(path, d["missing_tokens"], drop_columns=d["drop_columns"])


def cmd_simulate(args) -> int:
    cfg = _config(args)
    d = cfg["data"]
    spec = SimSpec(
        n=d["n"], p=d["p"], d=d["d"], seed=args.seed, mechanism=args.mechanism, pct_missing=args.pct / 100.0,
        fraction_of=d["fraction_of"], coef_log_mean=d["coef_log_mean"], coef_log_sd=d["coef_log_sd"],
        coef_parameterization=d["coef_parameterization"],
        missing_features=tuple(d["missing_features"]) or None,
    )
    paths = write_simulation(simulate(spec), args.out)
    print(json.dumps(paths, indent=2))
    return EXIT_OK


def _prepare(cfg, args):
    raw = _read_data(cfg, args.data)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    return standardize(split(raw, split_seed)), split_seed


def _save_checkpoint(report, data, split_seed, out_dir: Path) -> Path:
    extra = {
        "train_config": report.config.to_dict(),
        "mean": data.mean.tolist(),
        "std": data.std.tolist(),
        "split_seed": split_seed,
        "n_rows": data.n,
        "columns": data.columns,
        "fill": report.fill.tolist(),
        "final_valid": report.final_valid,
    }
    path = out_dir / "checkpoint.json"
    report.params.save(path, extra)
    report.write_trace(out_dir / "trace.csv")
    write_split(data, out_dir / "split.csv")
    return path


def cmd_train(args) -> int:
    cfg = _config(args)
    cfg["training"]["grid"] = False
    data, split_seed = _prepare(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = fit(data, cfg, args.kind, args.seed)
    except TrainingDiverged as exc:
        logger.error("%s", exc)
        return EXIT_FAIL
    path = _save_checkpoint(report, data, split_seed, out)
    print(json.dumps({"checkpoint": str(path), "final_valid": report.final_valid, "seconds": round(report.seconds, 3)}))
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _config(args)
    data, split_seed = _prepare(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t = cfg["training"]
    grid = default_grid(
        h=t["grid_h"], lr=t["grid_lr"], dz=t["grid_dz"], nhl=t["grid_nhl"], base=train_config(cfg, args.kind, args.seed)
    )
    try:
        best_cfg, best, reports = grid_search(data, grid, workers=cfg["experiment"]["workers"])
    except GridSearchError as exc:
        logger.error("%s", exc)
        return EXIT_FAIL
    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "h", "lr", "dz", "nhl", "selection_score", "final_valid", "selected"])
        for i, (c, rep) in enumerate(zip(grid, reports)):
            w.writerow([i, c.h, repr(c.lr), c.dz, c.nhl, repr(rep.selection_score), repr(rep.final_valid), int(c == best_cfg)])
    path = _save_checkpoint(best, data, split_seed, out)
    print(json.dumps({"checkpoint": str(path), "best": {k: getattr(best_cfg, k) for k in ("h", "lr", "dz", "nhl")}}))
    return EXIT_OK


def cmd_impute(args) -> int:
    blob = json.loads(Path(args.checkpoint).read_text())
    params = ModelParams.from_dict(blob)
    extra = blob.get("extra", {})
    tcfg = extra.get("train_config", {})
    raw = load_csv(args.data, drop_columns=args.drop_columns or ())
    if raw.p != params.config.p:
        logger.error("data has %d columns, checkpoint expects %d", raw.p, params.config.p)
        return EXIT_FAIL
    part = None if args.split == "all" else args.split
    if part is not None:
        if raw.n != extra.get("n_rows"):
            logger.error("split %r needs the training data (%s rows); got %d rows", part, extra.get("n_rows"), raw.n)
            return EXIT_FAIL
        raw = split(raw, extra["split_seed"])
    data = apply_standardization(raw, extra["mean"], extra["std"])
    kind = args.kind or tcfg.get("kind", "nimiwae")
    if kind == "mean":
        res = mean_impute(data, part) if part else mean_impute(replace(data, split=None), None)
    else:
        res = impute(params, data, K=args.K, M=args.M, seed=args.seed, kind=kind, split=part, fill=np.asarray(extra["fill"]))
    write_matrix_csv(args.out, res.imputed, None, data.columns)
    side = res.sidecar()
    side["rows"] = np.asarray(res.rows).tolist()
    side["split"] = args.split
    Path(str(args.out) + ".json").write_text(json.dumps(side, indent=2))
    print(json.dumps({k: v for k, v in side.items() if k != "rows"}))
    return EXIT_OK


def _summary_rows(values, columns):
    for j, name in enumerate(columns):
        col = values[:, j]
        col = col[np.isfinite(col)]
        q = np.quantile(col, [0.0, 0.25, 0.5, 0.75, 1.0]) if col.size else [np.nan] * 5
        yield {
            "column": name, "n": int(col.size), "mean": float(col.mean()) if col.size else np.nan,
            "sd": float(col.std(ddof=1)) if col.size > 1 else np.nan,
            "min": q[0], "q25": q[1], "median": q[2], "q75": q[3], "max": q[4],
        }


def cmd_evaluate(args) -> int:
    if args.logistic:
        ds = load_csv(args.data)
        if args.outcome not in ds.columns:
            logger.error("outcome column %r not found", args.outcome)
            return EXIT_FAIL
        if ds.mask.min() == 0:
            logger.error("logistic regression needs complete data; impute first")
            return EXIT_FAIL
        yi = ds.columns.index(args.outcome)
        covs = args.covariates or [c for c in ds.columns if c != args.outcome]
        idx = [ds.columns.index(c) for c in covs]
        X = np.column_stack([np.ones(ds.n), ds.values[:, idx]])
        try:
            rep = logistic_fit(X, ds.values[:, yi], ["intercept"] + covs)
        except (CollinearityError, SeparationError, ValueError) as exc:
            logger.error("%s", exc)
            return EXIT_FAIL
        if args.out:
            rep.write_csv(args.out)
        for r in rep.rows():
            print(json.dumps(r))
        return EXIT_OK

    if args.summary:
        ds = load_csv(args.data)
        vals = np.where(ds.mask == 1, ds.values, np.nan)
        rows = list(_summary_rows(vals, ds.columns))
        fields = list(rows[0])
        fh = open(args.out, "w", newline="") if args.out else sys.stdout
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if k not in ("column", "n") else v) for k, v in r.items()})
        if args.out:
            fh.close()
        return EXIT_OK

    if not (args.imputed and args.truth and args.mask):
        logger.error("evaluate needs --imputed, --truth and --mask (or --logistic / --summary)")
        return EXIT_FAIL
    imp = load_csv(args.imputed)
    truth = load_csv(args.truth)
    mask = load_csv(args.mask)
    sidecar = Path(str(args.imputed) + ".json")
    rows = np.arange(truth.n)
    if sidecar.exists():
        rows = np.asarray(json.loads(sidecar.read_text())["rows"], dtype=int)
    t = np.where(truth.mask[rows] == 1, truth.values[rows], np.nan)
    rep = average_l1(imp.values, t, mask.values[rows], truth.columns, args.method, args.mechanism, args.pct)
    out = asdict(rep)
    print(json.dumps(out))
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    bundle = run_experiment(cfg, args.out)
    print(json.dumps({"cells": bundle.manifest["n_cells"], "failed_rows": bundle.n_failed, **bundle.paths}))
    return EXIT_FAIL if bundle.n_failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nimiwae", description="Deep generative imputation under ignorable and non-ignorable missingness.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset with a simulated mask")
    _add_config_flags(p, ["data"])
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mechanism", choices=["MCAR", "MAR", "MNAR"], default="MNAR")
    p.add_argument("--pct", type=float, default=25.0, help="percent of entries missing")
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (("train", cmd_train, "train one model"), ("grid", cmd_grid, "grid search over h, lr, dz, nhl")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p, ["data", "model", "training", "experiment"])
        p.add_argument("--data", required=True, help="CSV with missing cells")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--kind", choices=["nimiwae", "imiwae", "iwae", "elbo"], default="nimiwae")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--split-seed", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("impute", help="impute a CSV with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "valid", "test", "all"], default="test")
    p.add_argument("--kind", choices=["nimiwae", "imiwae", "mean"], default=None)
    p.add_argument("--K", type=int, default=20)
    p.add_argument("--M", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-columns", nargs="*")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("evaluate", help="average L1, logistic regression, or column summaries")
    p.add_argument("--imputed")
    p.add_argument("--truth")
    p.add_argument("--mask")
    p.add_argument("--method", default="")
    p.add_argument("--mechanism", default="")
    p.add_argument("--pct", default="")
    p.add_argument("--logistic", action="store_true")
    p.add_argument("--summary", action="store_true")
    p.add_argument("--data")
    p.add_argument("--outcome")
    p.add_argument("--covariates", nargs="*")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="run a full experiment sweep")
    _add_config_flags(p, ["data", "model", "training", "imputation", "experiment"])
    p.add_argument("--out", default=None, help="output directory (overrides experiment.output_dir)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("invalid config: %s", exc)
        return EXIT_CONFIG
    except (DataFormatError, SimulationError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
