"""Minibatch training of the importance-weighted models and grid search.

Each step pre-imputes the batch, runs Encoder 1, draws K latent samples,
decodes them, runs Encoder 2, draws M missing-value samples per latent
sample, evaluates the mask decoder and the bound, then takes an Adam ascent
step. Only the training and validation splits are read here.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .bounds import KINDS, Batch, build_bound, draw_noise
from .dataio import MaskedDataset
from .networks import MaskModelSpec, ModelParams, NetworkConfig, bind, init_params

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Parameters became non-finite; ``state`` holds the last finite parameters and traces."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class GridSearchError(RuntimeError):
    def __init__(self, message, reports):
        super().__init__(message)
        self.reports = reports


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "nimiwae"
    K: int = 5
    M: int = 5
    lr: float = 0.01
    bs: int = 200
    epochs: int = 500
    h: int = 64
    nhl: int = 1
    dz: int = 2
    activation: str = "tanh"
    pre_impute: str = "zero"
    seed: int = 0
    mask_covariates: tuple | None = None
    mask_include_z: bool = False
    mask_nhl: int = 0
    mask_h: int = 64
    valid_K: int = 5
    valid_M: int = 5
    selection: str = "bound"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown bound kind {self.kind!r}")
        if self.epochs < 1 or self.bs < 1 or not self.lr >= 0:
            raise ValueError("need epochs >= 1, bs >= 1, lr >= 0")
        if self.pre_impute not in ("zero", "mean"):
            raise ValueError("pre_impute must be 'zero' or 'mean'")
        if self.selection not in ("bound", "masked_l1"):
            raise ValueError("selection must be 'bound' or 'masked_l1'")
        if self.kind == "elbo" and (self.K, self.M) != (1, 1):
            raise ValueError("elbo requires K = M = 1")

    @property
    def M_eff(self) -> int:
        return self.M if self.kind == "nimiwae" else 1

    def network(self, p: int) -> NetworkConfig:
        return NetworkConfig(p=p, dz=self.dz, h=self.h, nhl=self.nhl, activation=self.activation)

    def mask_spec(self, train_mask) -> MaskModelSpec:
        if self.kind != "nimiwae":
            return MaskModelSpec()
        mode = "logistic" if self.mask_nhl == 0 else "deep"
        return MaskModelSpec.for_mask(
            train_mask,
            covariates=self.mask_covariates,
            include_z=self.mask_include_z,
            mode=mode,
            nhl=self.mask_nhl,
            h=self.mask_h,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["mask_covariates"] is not None:
            d["mask_covariates"] = list(d["mask_covariates"])
        return d


@dataclass
class TrainReport:
    params: ModelParams
    config: TrainConfig
    train_trace: list = field(default_factory=list)
    valid_trace: list = field(default_factory=list)
    seconds: float = 0.0
    n_aborted: int = 0
    skipped_steps: int = 0
    fill: np.ndarray | None = None
    selection_score: float = float("nan")

    @property
    def final_valid(self) -> float:
        return self.valid_trace[-1] if self.valid_trace else float("nan")

    def same_as(self, other: "TrainReport") -> bool:
        """Equality of everything except wall-clock time."""
        return (
            self.params.equals(other.params)
            and self.config == other.config
            and self.train_trace == other.train_trace
            and self.valid_trace == other.valid_trace
            and self.n_aborted == other.n_aborted
            and self.skipped_steps == other.skipped_steps
        )

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_bound", "valid_bound"])
            for e, (t, v) in enumerate(zip(self.train_trace, self.valid_trace), start=1):
                w.writerow([e, repr(t), repr(v)])


def preimpute_fill(data: MaskedDataset, mode: str, stage: str = "train") -> np.ndarray:
    if mode == "zero":
        return np.zeros(data.p)
    return data.observed_means("train", stage)


def evaluate_bound(params: ModelParams, x, r, fill, kind, K, M, rng, chunk=1000) -> tuple[float, int]:
    """Row-weighted bound over a matrix, in chunks; returns (value, aborted rows)."""
    total, rows, aborted = 0.0, 0, 0
    dz, p = params.config.dz, params.config.p
    m = M if kind == "nimiwae" else 0
    for start in range(0, x.shape[0], chunk):
        b = Batch(x[start:start + chunk], r[start:start + chunk], fill)
        noise = draw_noise(rng, b.n, dz, p, K, m)
        tape = ad.Tape()
        g = build_bound(tape, bind(tape, params, trainable=False), params, b, noise, kind)
        kept = b.n - g.estimate.n_aborted
        if kept:
            total += g.estimate.value * kept
            rows += kept
        aborted += g.estimate.n_aborted
    return (total / rows if rows else float("nan")), aborted


def train(data: MaskedDataset, config: TrainConfig) -> TrainReport:
    """Fit one model on the training split; validation bound tracked per epoch."""
    if data.split is None:
        raise ValueError("dataset must be split before training")
    x_tr, r_tr = data.subset("train", "train")
    x_va, r_va = data.subset("valid", "train")
    if x_tr.shape[0] == 0:
        raise ValueError("training split is empty")
    fill = preimpute_fill(data, config.pre_impute)
    net = config.network(data.p)
    spec = config.mask_spec(r_tr)
    params = init_params(net, spec, [config.seed, 0])
    arrays = dict(params.arrays)
    state = ad.AdamState(lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])
    valid_rng = np.random.default_rng([config.seed, 2])
    K, M = config.K, config.M_eff
    m_noise = M if config.kind == "nimiwae" else 0

    report = TrainReport(params, config, fill=fill)
    t0 = time.perf_counter()
    n = x_tr.shape[0]
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total, kept_rows = 0.0, 0
        for start in range(0, n, config.bs):
            idx = perm[start:start + config.bs]
            batch = Batch(x_tr[idx], r_tr[idx], fill)
            noise = draw_noise(rng, batch.n, net.dz, net.p, K, m_noise)
            tape = ad.Tape()
            current = ModelParams(arrays, net, spec)
            graph = build_bound(tape, bind(tape, current), current, batch, noise, config.kind)
            report.n_aborted += graph.estimate.n_aborted
            if graph.objective is None:
                report.skipped_steps += 1
                continue
            kept = batch.n - graph.estimate.n_aborted
            total += graph.estimate.value * kept
            kept_rows += kept
            grads = tape.gradients(graph.objective)
            if config.lr == 0:
                continue
            new_arrays, state = ad.adam_step(arrays, grads, state, maximize=True)
            if not all(np.all(np.isfinite(v)) for v in new_arrays.values()):
                report.params = ModelParams(arrays, net, spec)
                report.seconds = time.perf_counter() - t0
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch + 1}", report)
            arrays = new_arrays
        report.train_trace.append(total / kept_rows if kept_rows else float("nan"))
        current = ModelParams(arrays, net, spec)
        if x_va.shape[0]:
            val, _ = evaluate_bound(current, x_va, r_va, fill, config.kind, config.valid_K, config.valid_M, valid_rng)
        else:
            val = float("nan")
        report.valid_trace.append(val)
    report.params = ModelParams(arrays, net, spec)
    report.seconds = time.perf_counter() - t0
    report.skipped_steps += state.skipped
    report.selection_score = report.final_valid
    if config.selection == "masked_l1":
        report.selection_score = -masked_validation_l1(report, data)
    return report


def masked_validation_l1(report: TrainReport, data: MaskedDataset, frac: float = 0.2, seed: int = 12345) -> float:
    """Average L1 (standardized scale) on validation cells hidden completely at random."""
    from .imputation import impute_matrix

    x_va, r_va = data.subset("valid", "select")
    rng = np.random.default_rng(seed)
    hide = (r_va == 1) & (rng.random(r_va.shape) < frac)
    # keep at least one observed cell per row
    for i in np.flatnonzero(hide.sum(axis=1) == r_va.sum(axis=1)):
        hide[i, np.flatnonzero(r_va[i])[0]] = False
    if not hide.any():
        return float("nan")
    r_hidden = np.where(hide, 0.0, r_va)
    cfg = report.config
    kind = "nimiwae" if cfg.kind == "nimiwae" else "imiwae"
    xhat, _, _ = impute_matrix(report.params, x_va, r_hidden, report.fill, kind, cfg.valid_K, cfg.valid_M, seed)
    return float(np.abs(xhat[hide] - x_va[hide]).mean())


def default_grid(
    h=(128, 64), lr=(0.001, 0.01), dz=(4, 2), nhl=(1, 2), base: TrainConfig | None = None, **fixed
) -> list[TrainConfig]:
    """All combinations of the four tuned hyperparameters over a base config."""
    base = TrainConfig() if base is None else base
    base = replace(base, **fixed)
    return [
        replace(base, h=hh, lr=ll, dz=dd, nhl=nn)
        for hh, ll, dd, nn in itertools.product(h, lr, dz, nhl)
    ]


def _train_safe(args):
    data, cfg = args
    try:
        return train(data, cfg), None
    except TrainingDiverged as exc:
        return exc.state, str(exc)


def grid_search(data: MaskedDataset, grid: list, workers: int = 1):
    """Train every config; pick the best final validation score.

    Ties break toward smaller h, then nhl, then dz, then lr, then grid order.
    Returns ``(best_config, best_report, reports)``.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    jobs = [(data, cfg) for cfg in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_safe, jobs))
        for _, cfg in jobs:
            data.access_log.extend([("train", "train"), ("train", "valid")])
    else:
        results = [_train_safe(job) for job in jobs]
    reports = [rep for rep, _ in results]
    candidates = []
    for i, (rep, err) in enumerate(results):
        score = rep.selection_score if err is None else float("nan")
        if err is not None:
            logger.warning("config %d diverged: %s", i, err)
        if math.isfinite(score):
            cfg = rep.config
            candidates.append(((-score, cfg.h, cfg.nhl, cfg.dz, cfg.lr, i), i))
    if not candidates:
        raise GridSearchError("every configuration diverged", reports)
    best = min(candidates)[1]
    return grid[best], reports[best], reports
