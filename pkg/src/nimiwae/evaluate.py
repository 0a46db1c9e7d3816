"""Imputation accuracy and downstream logistic regression."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats
from scipy.special import expit

Z_975 = 1.959963984540054


class CollinearityError(ValueError):
    def __init__(self, message, columns):
        super().__init__(message)
        self.columns = columns


class SeparationError(RuntimeError):
    pass


@dataclass
class L1Report:
    avg_l1: float
    n_miss: int
    per_column: dict = field(default_factory=dict)
    method: str = ""
    mechanism: str = ""
    pct_missing: str = ""


def average_l1(imputed, truth, mask, columns=None, method="", mechanism="", pct_missing="") -> L1Report:
    """Mean |imputed - truth| over masked cells (mask == 0) whose truth is known."""
    imputed = np.asarray(imputed, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    mask = np.asarray(mask)
    if not (imputed.shape == truth.shape == mask.shape):
        raise ValueError(f"shape mismatch: {imputed.shape}, {truth.shape}, {mask.shape}")
    sel = (mask == 0) & np.isfinite(truth)
    n_miss = int(sel.sum())
    if n_miss == 0:
        raise ValueError("no masked entries with known truth")
    err = np.abs(imputed - truth)
    columns = columns or [f"x{j + 1}" for j in range(truth.shape[1])]
    per_col = {
        columns[j]: float(err[sel[:, j], j].mean()) for j in range(truth.shape[1]) if sel[:, j].any()
    }
    return L1Report(float(err[sel].sum() / n_miss), n_miss, per_col, method, mechanism, str(pct_missing))


@dataclass
class RegressionReport:
    names: list
    coef: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_iter: int = 0
    converged: bool = True

    def rows(self):
        for k, name in enumerate(self.names):
            yield {
                "covariate": name,
                "coef": float(self.coef[k]),
                "se": float(self.se[k]),
                "z": float(self.z[k]),
                "p_value": float(self.p_value[k]),
                "ci_low": float(self.ci_low[k]),
                "ci_high": float(self.ci_high[k]),
            }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["covariate", "coef", "se", "z", "p_value", "ci_low", "ci_high"], lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def check_rank(X, names, rtol=1e-10):
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank < X.shape[1]:
        bad = [names[j] for j in piv[rank:]]
        raise CollinearityError(f"design matrix is rank deficient; collinear columns: {bad}", bad)


def logistic_fit(X, y, names=None, tol=1e-8, max_iter=100) -> RegressionReport:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    ``X`` must already contain an intercept column if one is wanted. Standard
    errors come from the inverse observed information at the optimum.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    names = list(names) if names is not None else [f"b{j}" for j in range(k)]
    if y.shape[0] != n:
        raise ValueError("X and y have different row counts")
    if not np.all((y == 0) | (y == 1)) or y.min() == y.max():
        raise ValueError("y must be binary with both classes present")
    check_rank(X, names)

    beta = np.zeros(k)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(X @ beta)
        grad = X.T @ (y - mu)
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        info = X.T @ (X * (mu * (1.0 - mu))[:, None])
        try:
            step = linalg.solve(info, grad, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise SeparationError(f"singular information matrix at iteration {it}") from exc
        beta = beta + step
        if np.linalg.norm(beta) > 1e3:
            raise SeparationError(f"coefficients diverged (|beta| > 1e3) at iteration {it}; likely separation")
    eta = X @ beta
    if np.max(np.abs(eta)) > 30.0:
        raise SeparationError("fitted probabilities numerically 0 or 1; the outcome is (quasi-)separated")
    mu = expit(eta)
    info = X.T @ (X * (mu * (1.0 - mu))[:, None])
    try:
        cov = linalg.inv(info)
    except linalg.LinAlgError as exc:
        raise SeparationError("singular information matrix at the optimum") from exc
    se = np.sqrt(np.diag(cov))
    z = beta / se
    p = 2.0 * stats.norm.sf(np.abs(z))
    return RegressionReport(names, beta, se, z, p, beta - Z_975 * se, beta + Z_975 * se, it, converged)
