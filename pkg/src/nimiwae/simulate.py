"""Linear-Gaussian synthetic data and logistic MCAR/MAR/MNAR masks.

Data: ``X = Z W + B`` with ``Z ~ N(0, I_d)`` per row and ``W``, ``B`` entrywise
standard normal. Masks: for each missing-eligible feature ``j``,
``logit P(r_ij = 1) = phi0 + coef_j * x_i,cov(j)`` where ``cov(j)`` is the
paired observed feature (MAR), ``j`` itself (MNAR), or absent (MCAR). The
shared intercept ``phi0`` is found by bisection so that the realized missing
fraction hits the target.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

MECHANISMS = ("MCAR", "MAR", "MNAR")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimSpec:
    n: int = 2000
    p: int = 8
    d: int = 2
    seed: int = 0
    mechanism: str = "MNAR"
    pct_missing: float = 0.25
    fraction_of: str = "all"
    coef_log_mean: float = 5.0
    coef_log_sd: float = 0.2
    coef_parameterization: str = "log"
    missing_features: tuple | None = None
    mar_pairing: tuple | None = None
    tolerance: float = 0.005
    mask_seed: int | None = None

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.d < 1:
            raise ValueError(f"n, p, d must be >= 1 (got {self.n}, {self.p}, {self.d})")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if not 0.0 <= self.pct_missing < 1.0:
            raise ValueError("pct_missing must be in [0, 1)")
        if self.fraction_of not in ("all", "eligible"):
            raise ValueError("fraction_of must be 'all' or 'eligible'")
        if self.coef_parameterization not in ("log", "arithmetic"):
            raise ValueError("coef_parameterization must be 'log' or 'arithmetic'")
        miss = self.missing_index()
        obs = self.observed_index()
        if self.mechanism == "MAR":
            pairing = self.pairing()
            if len(set(pairing)) != len(miss) or not set(pairing) <= set(obs.tolist()):
                raise ValueError("MAR pairing must map missing features one-to-one onto observed features")

    def missing_index(self) -> np.ndarray:
        if self.missing_features is not None:
            return np.asarray(self.missing_features, dtype=np.intp)
        if self.p % 2:
            raise ValueError("p must be even for the half-features rule")
        return np.arange(self.p // 2, self.p)

    def observed_index(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.p), self.missing_index())

    def pairing(self) -> np.ndarray:
        if self.mar_pairing is not None:
            return np.asarray(self.mar_pairing, dtype=np.intp)
        return self.observed_index()[: len(self.missing_index())]


@dataclass
class MissingnessSpec:
    mechanism: str
    phi0: float
    missing_features: list
    covariates: list
    coefficients: list
    realized_fraction: float = float("nan")

    def to_dict(self):
        return asdict(self)


@dataclass
class SimulatedDataset:
    X: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    B: np.ndarray
    R: np.ndarray | None = None
    missingness: MissingnessSpec | None = None
    spec: SimSpec | None = field(default=None, repr=False)


def simulate_data(spec: SimSpec) -> SimulatedDataset:
    rng = np.random.default_rng([spec.seed, 0])
    Z = rng.standard_normal((spec.n, spec.d))
    W = rng.standard_normal((spec.d, spec.p))
    B = rng.standard_normal((spec.n, spec.p))
    return SimulatedDataset(Z @ W + B, Z, W, B, spec=spec)


def draw_coefficients(spec: SimSpec, size: int, rng) -> np.ndarray:
    if spec.coef_parameterization == "log":
        loc = spec.coef_log_mean
    else:
        # lognormal whose arithmetic mean equals coef_log_mean
        loc = np.log(spec.coef_log_mean) - 0.5 * spec.coef_log_sd**2
    return rng.lognormal(mean=loc, sigma=spec.coef_log_sd, size=size)


def _realized(u, lin, phi0):
    return u >= expit(phi0 + lin)


def simulate_mask(dataset, spec: SimSpec | None = None):
    """Draw the mask R (1 = observed) and the realized missingness model.

    ``dataset`` is a :class:`SimulatedDataset` or a complete data matrix.
    """
    if isinstance(dataset, SimulatedDataset):
        spec = dataset.spec if spec is None else spec
        X = dataset.X
    else:
        X = np.asarray(dataset, dtype=np.float64)
    if spec is None:
        raise ValueError("a SimSpec is required")
    n, p = X.shape
    rng = np.random.default_rng([spec.seed if spec.mask_seed is None else spec.mask_seed, 1])
    miss = spec.missing_index()
    if spec.mechanism == "MCAR":
        cov = np.full(len(miss), -1)
        coef = np.zeros(len(miss))
    else:
        cov = spec.pairing() if spec.mechanism == "MAR" else miss.copy()
        coef = draw_coefficients(spec, len(miss), rng)
    lin = np.zeros((n, len(miss)))
    for t in range(len(miss)):
        if cov[t] >= 0:
            lin[:, t] = coef[t] * X[:, cov[t]]
    u = rng.random((n, len(miss)))

    denom = n * p if spec.fraction_of == "all" else n * len(miss)
    target = spec.pct_missing

    def frac(phi0):
        return _realized(u, lin, phi0).sum() / denom

    lo, hi = -1.0, 1.0
    while frac(lo) < target and lo > -1e8:
        lo *= 2.0
    while frac(hi) > target and hi < 1e8:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if frac(mid) > target:
            lo = mid
        else:
            hi = mid
        if abs(frac(mid) - target) <= spec.tolerance / 4:
            break
    phi0 = min((lo, mid, hi), key=lambda v: abs(frac(v) - target))
    achieved = frac(phi0)
    if abs(achieved - target) > spec.tolerance:
        raise SimulationError(f"cannot reach missing fraction {target:.3f}; closest is {achieved:.4f}")

    R = np.ones((n, p))
    R[:, miss] = np.where(_realized(u, lin, phi0), 0.0, 1.0)
    realized = float((R == 0).sum() / (n * p))
    info = MissingnessSpec(
        spec.mechanism, float(phi0), miss.tolist(), [int(c) for c in cov], coef.tolist(), realized
    )
    return R, info


def simulate(spec: SimSpec) -> SimulatedDataset:
    ds = simulate_data(spec)
    ds.R, ds.missingness = simulate_mask(ds, spec)
    return ds


def write_simulation(ds: SimulatedDataset, prefix) -> dict:
    """Write ``<prefix>.csv`` (masked), ``_truth.csv``, ``_mask.csv`` and ``_spec.json``."""
    from .dataio import write_matrix_csv

    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    cols = [f"x{j + 1}" for j in range(ds.X.shape[1])]
    paths = {
        "data": prefix.with_name(prefix.name + ".csv"),
        "truth": prefix.with_name(prefix.name + "_truth.csv"),
        "mask": prefix.with_name(prefix.name + "_mask.csv"),
        "spec": prefix.with_name(prefix.name + "_spec.json"),
    }
    write_matrix_csv(paths["data"], ds.X, ds.R, cols)
    write_matrix_csv(paths["truth"], ds.X, None, cols)
    write_matrix_csv(paths["mask"], ds.R.astype(int), None, cols)
    meta = {"spec": asdict(ds.spec), "missingness": ds.missingness.to_dict()}
    paths["spec"].write_text(json.dumps(meta, indent=2, sort_keys=True))
    return {k: str(v) for k, v in paths.items()}
