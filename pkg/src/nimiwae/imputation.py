"""Point imputation by self-normalized importance sampling, and mean imputation.

For the non-ignorable model each missing cell is imputed as the softmax-weighted
average of the K*M sampled missing values, with weights from the full
NIMIWAE log-weights (mask-model term included unless ``include_mask=False``).
For the ignorable model the K decoder means are averaged with the IMIWAE
weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bounds import Batch, build_bound, draw_noise
from .dataio import MaskedDataset, to_original_scale
from .networks import ModelParams, bind

logger = logging.getLogger(__name__)


@dataclass
class ImputationResult:
    imputed: np.ndarray
    ess: np.ndarray
    K: int
    M: int
    rows: np.ndarray | None = None
    n_fallback: int = 0
    seed: int | None = None
    method: str = ""

    def sidecar(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "K": self.K,
            "M": self.M,
            "n_fallback": self.n_fallback,
            "mean_ess": float(np.mean(self.ess)) if self.ess.size else None,
        }


def softmax_rows(logw: np.ndarray) -> np.ndarray:
    m = np.max(logw, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    w = np.exp(logw - m)
    w[~np.isfinite(w)] = 0.0
    s = w.sum(axis=1, keepdims=True)
    return np.divide(w, s, out=np.zeros_like(w), where=s > 0)


def impute_matrix(params: ModelParams, x, r, fill, kind, K, M, seed, include_mask=True, chunk=256):
    """Impute a standardized matrix; returns (imputed, ess, fallback row indices).

    Rows whose weights are all non-finite keep their pre-imputation fill.
    """
    if kind not in ("nimiwae", "imiwae"):
        raise ValueError(f"cannot impute with bound kind {kind!r}")
    if not params.is_finite():
        raise ValueError("parameters contain non-finite values")
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    fill = np.zeros(x.shape[1]) if fill is None else np.asarray(fill, dtype=np.float64)
    rng = np.random.default_rng(seed)
    dz, p = params.config.dz, params.config.p
    out = np.where(r == 1, np.nan_to_num(x), fill[None, :])
    ess = np.full(x.shape[0], np.nan)
    fallback = []
    m_noise = M if kind == "nimiwae" else 0
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, start + chunk)
        b = Batch(x[sl], r[sl], fill)
        noise = draw_noise(rng, b.n, dz, p, K, m_noise)
        tape = ad.Tape()
        g = build_bound(tape, bind(tape, params, trainable=False), params, b, noise, kind, include_mask=include_mask)
        w = softmax_rows(g.estimate.log_weights)
        n = b.n
        if kind == "nimiwae":
            samples = g.xm.value.reshape(K * M, n, p).transpose(1, 0, 2)
        else:
            samples = g.mu_x.value.reshape(K, n, p).transpose(1, 0, 2)
        est = np.einsum("ns,nsp->np", w, samples)
        good = w.sum(axis=1) > 0
        block = out[sl]
        miss = b.r == 0
        block[miss & good[:, None]] = est[miss & good[:, None]]
        out[sl] = block
        ess[sl] = np.where(good, 1.0 / np.maximum((w * w).sum(axis=1), 1e-300), 0.0)
        fallback.extend((start + np.flatnonzero(~good)).tolist())
    if fallback:
        logger.warning("%d rows had no finite importance weights; column means used", len(fallback))
    return out, ess, fallback


def impute(
    params: ModelParams,
    data: MaskedDataset,
    K: int = 20,
    M: int = 20,
    seed: int = 0,
    kind: str = "nimiwae",
    split: str | None = "test",
    include_mask: bool = True,
    fill=None,
    stage: str = "impute",
) -> ImputationResult:
    """Impute one split of a standardized dataset; the result is on the original scale.

    Observed cells are copied from the un-standardized input, so they match
    it exactly.
    """
    if split is None:
        x, r, rows = data.values, data.mask, np.arange(data.n)
        data.access_log.append((stage, "all"))
    else:
        x, r = data.subset(split, stage)
        rows = data.rows(split)
    train_means = data.observed_means("train", stage) if data.split is not None else data.observed_means()
    fill = np.zeros(data.p) if fill is None else fill
    std_imp, ess, fallback = impute_matrix(params, x, r, fill, kind, K, M if kind == "nimiwae" else 1, seed, include_mask)
    if fallback:
        std_imp[fallback] = np.where(r[fallback] == 1, std_imp[fallback], train_means[None, :])
    imputed = to_original_scale(std_imp, data)
    if data.original is not None:
        imputed = np.where(r == 1, data.original[rows], imputed)
    return ImputationResult(imputed, ess, K, M if kind == "nimiwae" else 1, rows, len(fallback), seed, kind)


def mean_impute(data: MaskedDataset, split: str | None = "test", stage: str = "impute") -> ImputationResult:
    """Fill missing cells with the training split's observed column means (original scale)."""
    if data.split is not None:
        vals, mask = data.subset("train", stage)
    else:
        vals, mask = data.values, data.mask
    if data.original is not None:
        vals = data.original[data.rows("train")] if data.split is not None else data.original
    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError(f"columns {np.flatnonzero(counts == 0).tolist()} are fully missing in training data")
    means = np.where(mask == 1, vals, 0.0).sum(axis=0) / counts
    if split is None:
        x, r, rows = data.values, data.mask, np.arange(data.n)
    else:
        x, r = data.subset(split, stage)
        rows = data.rows(split)
    if data.original is not None:
        x = data.original[rows]
    imputed = np.where(r == 1, x, means[None, :])
    return ImputationResult(imputed, np.ones(len(rows)), 0, 0, rows, 0, None, "mean")
