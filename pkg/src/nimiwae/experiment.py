"""Sweep runner: simulate or load, split, standardize, train, impute, score.

Every (replicate, mechanism, percentage) cell is independent. Within a cell
the replicate seed drives the data, mask, split, training and imputation
streams, so cells that share a replicate also share their random numbers.
All models in a cell are trained before any test row is read.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .dataio import MaskedDataset, load_csv, split, standardize
from .evaluate import average_l1
from .imputation import impute, mean_impute
from .simulate import SimSpec, simulate_data, simulate_mask
from .training import TrainConfig, default_grid, grid_search, train

logger = logging.getLogger(__name__)

RESULT_FIELDS = ["replicate", "mechanism", "pct_missing", "method", "avg_l1", "n_miss", "train_seconds", "seed", "status"]
SUMMARY_FIELDS = ["method", "mechanism", "pct_missing", "n", "mean", "sd"]


@dataclass
class Cell:
    replicate: int
    mechanism: str
    pct_missing: float


@dataclass
class ExperimentBundle:
    results: list
    summary: list
    manifest: dict
    paths: dict = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.results if r["status"] != "ok")


def train_config(cfg: dict, kind: str, seed: int) -> TrainConfig:
    m, t = cfg["model"], cfg["training"]
    return TrainConfig(
        kind=kind,
        K=t["K"],
        M=t["M"],
        lr=t["lr"],
        bs=t["bs"],
        epochs=t["epochs"],
        h=m["h"],
        nhl=m["nhl"],
        dz=m["dz"],
        activation=m["activation"],
        pre_impute=m["pre_impute"],
        seed=seed,
        mask_include_z=m["mask_include_z"],
        mask_nhl=m["mask_nhl"],
        mask_h=m["mask_h"],
        valid_K=t["valid_K"],
        valid_M=t["valid_M"],
        selection=t["selection"],
    )


def fit(data: MaskedDataset, cfg: dict, kind: str, seed: int, workers: int = 1):
    base = train_config(cfg, kind, seed)
    t = cfg["training"]
    if not t["grid"]:
        return train(data, base)
    grid = default_grid(h=t["grid_h"], lr=t["grid_lr"], dz=t["grid_dz"], nhl=t["grid_nhl"], base=base)
    _, report, _ = grid_search(data, grid, workers=workers)
    return report


def cell_data(cfg: dict, cell: Cell, base_matrix=None):
    """Complete truth matrix and masked dataset for one cell."""
    d = cfg["data"]
    feats = tuple(d["missing_features"]) or None
    if base_matrix is None:
        spec = SimSpec(n=d["n"], p=d["p"], d=d["d"], seed=cell.replicate)
        truth = simulate_data(spec).X
    else:
        truth = base_matrix
    spec = SimSpec(
        n=truth.shape[0],
        p=truth.shape[1],
        d=d["d"],
        seed=cell.replicate,
        mechanism=cell.mechanism,
        pct_missing=cell.pct_missing / 100.0,
        fraction_of=d["fraction_of"],
        coef_log_mean=d["coef_log_mean"],
        coef_log_sd=d["coef_log_sd"],
        coef_parameterization=d["coef_parameterization"],
        missing_features=feats,
    )
    known = np.isfinite(truth)
    R, info = simulate_mask(np.where(known, truth, 0.0), spec)
    R = R * known
    data = MaskedDataset(np.where(R == 1, truth, 0.0), R)
    return truth, data, info


def run_cell(cfg: dict, cell: Cell, base_matrix=None) -> tuple[list, list]:
    """Rows for every method in one cell, plus the cell's data access log."""
    methods = cfg["experiment"]["methods"]
    timing = cfg["experiment"]["record_timing"]
    seed = cell.replicate
    rows = []

    def row(method, status, l1=None, seconds=None):
        return {
            "replicate": cell.replicate,
            "mechanism": cell.mechanism,
            "pct_missing": cell.pct_missing,
            "method": method,
            "avg_l1": "" if l1 is None else repr(l1.avg_l1),
            "n_miss": "" if l1 is None else l1.n_miss,
            "train_seconds": "" if (seconds is None or not timing) else f"{seconds:.3f}",
            "seed": seed,
            "status": status,
        }

    try:
        truth, raw, _ = cell_data(cfg, cell, base_matrix)
        data = standardize(split(raw, seed))
    except Exception as exc:
        logger.warning("cell %s failed during data preparation: %s", cell, exc)
        return [row(m, f"failed: {type(exc).__name__}: {exc}") for m in methods], []

    reports, errors = {}, {}
    for method in methods:
        if method == "mean":
            continue
        try:
            reports[method] = fit(data, cfg, method, seed)
        except Exception as exc:
            logger.warning("cell %s method %s failed in training: %s", cell, method, exc)
            errors[method] = f"failed: {type(exc).__name__}: {exc}"

    imp_cfg = cfg["imputation"]
    test_rows = data.rows("test")
    for method in methods:
        if method in errors:
            rows.append(row(method, errors[method]))
            continue
        try:
            if method == "mean":
                res = mean_impute(data, "test")
                seconds = 0.0
            else:
                rep = reports[method]
                res = impute(
                    rep.params, data, K=imp_cfg["K"], M=imp_cfg["M"], seed=seed, kind=method,
                    include_mask=imp_cfg["include_mask"], fill=rep.fill,
                )
                seconds = rep.seconds
            data.access_log.append(("evaluate", "test"))
            l1 = average_l1(res.imputed, truth[test_rows], data.mask[test_rows], data.columns, method, cell.mechanism, cell.pct_missing)
            rows.append(row(method, "ok", l1, seconds))
        except Exception as exc:
            logger.warning("cell %s method %s failed in imputation: %s", cell, method, exc)
            rows.append(row(method, f"failed: {type(exc).__name__}: {exc}"))
    return rows, list(data.access_log)


def _run_cell_job(args):
    return run_cell(*args)


def held_out_ok(access_log) -> bool:
    """True when no test-split read precedes the last training or selection read."""
    last_fit = max((i for i, (stage, _) in enumerate(access_log) if stage in ("train", "select", "standardize")), default=-1)
    first_test = min((i for i, (_, s) in enumerate(access_log) if s == "test"), default=len(access_log))
    return first_test > last_fit and all(
        stage in ("impute", "evaluate") for stage, s in access_log if s == "test"
    )


def summarize(results: list) -> list:
    groups = {}
    for r in results:
        if r["status"] != "ok":
            continue
        groups.setdefault((r["method"], r["mechanism"], r["pct_missing"]), []).append(float(r["avg_l1"]))
    out = []
    for (method, mech, pct), vals in groups.items():
        v = np.asarray(vals)
        out.append({
            "method": method,
            "mechanism": mech,
            "pct_missing": pct,
            "n": len(vals),
            "mean": repr(float(v.mean())),
            "sd": repr(float(v.std(ddof=1))) if len(vals) > 1 else "",
        })
    return out


def _write_rows(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cells_for(cfg: dict) -> list:
    exp = cfg["experiment"]
    return [
        Cell(rep, mech, pct)
        for rep in exp["replicates"]
        for mech in exp["mechanisms"]
        for pct in exp["pct_missing"]
    ]


def run_experiment(cfg: dict, output_dir=None) -> ExperimentBundle:
    """Run the whole sweep and write results, summary and manifest files."""
    started = time.time()
    exp = cfg["experiment"]
    out_dir = Path(output_dir or exp["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    base = None
    if cfg["data"]["source"] == "csv":
        ds = load_csv(cfg["data"]["path"], cfg["data"]["missing_tokens"], drop_columns=cfg["data"]["drop_columns"])
        base = np.where(ds.mask == 1, ds.values, np.nan)

    cells = cells_for(cfg)
    jobs = [(cfg, c, base) for c in cells]
    if exp["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=exp["workers"]) as pool:
            outputs = list(pool.map(_run_cell_job, jobs))
    else:
        outputs = [_run_cell_job(j) for j in jobs]

    results, logs = [], []
    for cell, (rows, log) in zip(cells, outputs):
        results.extend(rows)
        logs.append({"cell": [cell.replicate, cell.mechanism, cell.pct_missing], "access_log": log, "held_out_ok": held_out_ok(log)})
    summary = summarize(results)

    paths = {
        "results": str(out_dir / "results.csv"),
        "summary": str(out_dir / "summary.csv"),
        "manifest": str(out_dir / "manifest.json"),
    }
    _write_rows(paths["results"], RESULT_FIELDS, results)
    _write_rows(paths["summary"], SUMMARY_FIELDS, summary)
    manifest = {
        "versions": {
            "nimiwae": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "kernel_backend": kernels.BACKEND,
        },
        "config": cfg,
        "seeds": exp["replicates"],
        "started": started,
        "wall_seconds": time.time() - started,
        "n_cells": len(cells),
        "failures": [r for r in results if r["status"] != "ok"],
        "data_access": logs,
    }
    Path(paths["manifest"]).write_text(json.dumps(manifest, indent=2, default=str))
    return ExperimentBundle(results, summary, manifest, paths)
