"""ELBO, IWAE, ignorable (IMIWAE) and non-ignorable (NIMIWAE) lower bounds.

All bounds share one graph builder, :func:`build_bound`. Samples are stacked
along rows: the K latent draws for an n-row batch form a ``K*n`` block in
k-major order, and the M missing-value draws per latent draw form an
``M*K*n`` block ordered ``(l, k, i)``. Log-weights are folded back into an
``n x (K*M)`` matrix whose column ``l*K + k`` holds sample ``(k, l)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .networks import MaskModelSpec, ModelParams, bind, decoder1, encoder1, encoder2, mask_logits

logger = logging.getLogger(__name__)

KINDS = ("elbo", "iwae", "imiwae", "nimiwae")


@dataclass(frozen=True)
class BoundConfig:
    kind: str = "nimiwae"
    K: int = 5
    M: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown bound kind {self.kind!r}")
        if self.K < 1 or self.M < 1:
            raise ValueError("K and M must be >= 1")
        if self.kind == "elbo" and (self.K, self.M) != (1, 1):
            raise ValueError("elbo requires K = M = 1")
        if self.kind in ("iwae", "imiwae") and self.M != 1:
            raise ValueError(f"{self.kind} requires M = 1")


@dataclass
class Batch:
    """Standardized rows with their mask (1 = observed).

    ``fill`` holds the per-column pre-imputation values for missing cells
    (zeros unless mean pre-imputation is requested).
    """

    x: np.ndarray
    r: np.ndarray
    fill: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.r = np.atleast_2d(np.asarray(self.r, dtype=np.float64))
        if self.x.shape != self.r.shape:
            raise ValueError(f"x shape {self.x.shape} != mask shape {self.r.shape}")
        fill = np.zeros(self.x.shape[1]) if self.fill is None else np.asarray(self.fill, dtype=np.float64)
        self.fill = fill
        observed = self.r == 1
        # missing cells may hold NaN placeholders; never let them reach the graph
        self.x_obs = np.where(observed, np.nan_to_num(self.x), 0.0)
        self.x_pre = np.where(observed, self.x_obs, fill[None, :])

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]


@dataclass
class Noise:
    """Standard-normal draws: ``z`` is (K, n, dz); ``xm`` is (M, K, n, p) or None."""

    z: np.ndarray
    xm: np.ndarray | None = None

    @property
    def K(self):
        return self.z.shape[0]

    @property
    def M(self):
        return 1 if self.xm is None else self.xm.shape[0]


def draw_noise(rng: np.random.Generator, n: int, dz: int, p: int, K: int, M: int = 0) -> Noise:
    z = rng.standard_normal((K, n, dz))
    xm = rng.standard_normal((M, K, n, p)) if M > 0 else None
    return Noise(z, xm)


@dataclass
class BoundEstimate:
    value: float
    log_weights: np.ndarray
    K: int
    M: int
    n_aborted: int = 0
    aborted_rows: tuple = ()

    @property
    def row_bounds(self) -> np.ndarray:
        from .kernels import lse_rows_fwd

        return lse_rows_fwd(self.log_weights) - math.log(self.K * self.M)


@dataclass
class BoundGraph:
    objective: ad.Var | None
    estimate: BoundEstimate
    xm: ad.Var | None
    mu_x: ad.Var


def _fold(v: ad.Var, groups: int, n: int) -> ad.Var:
    """(groups*n) x 1 column -> n x groups matrix."""
    return ad.transpose(ad.reshape(v, (groups, n)))


def build_bound(
    tape: ad.Tape,
    P: dict,
    params: ModelParams,
    batch: Batch,
    noise: Noise,
    kind: str,
    mask_spec: MaskModelSpec | None = None,
    include_mask: bool = True,
) -> BoundGraph:
    if kind not in KINDS:
        raise ValueError(f"unknown bound kind {kind!r}")
    config = params.config
    n, p, dz = batch.n, batch.p, config.dz
    if p != config.p:
        raise ValueError(f"batch has {p} features, model expects {config.p}")
    K = noise.K
    if noise.z.shape[1:] != (n, dz):
        raise ValueError(f"latent noise shape {noise.z.shape} does not match (K, {n}, {dz})")
    nonignorable = kind == "nimiwae"
    M = noise.M if nonignorable else 1
    if nonignorable:
        if noise.xm is None:
            raise ValueError("nimiwae needs missing-value noise")
        if noise.xm.shape[1:] != (K, n, p):
            raise ValueError(f"missing-value noise shape {noise.xm.shape} does not match (M, {K}, {n}, {p})")

    r = tape.const(batch.r)
    x_pre = tape.const(batch.x_pre)

    mu_z, sig_z = encoder1(P, x_pre, r, config)
    mu_zk, sig_zk = ad.tile_rows(mu_z, K), ad.tile_rows(sig_z, K)
    z = ad.add(mu_zk, ad.mul(sig_zk, noise.z.reshape(K * n, dz)))
    log_q1 = ad.gaussian_logpdf_rows(z, mu_zk, sig_zk)
    log_pz = ad.gaussian_logpdf_rows(z, np.zeros((K * n, dz)), np.ones((K * n, dz)))
    mu_x, sig_x = decoder1(P, z, config)

    xm = None
    if not nonignorable:
        weight = None if kind in ("elbo", "iwae") else np.tile(batch.r, (K, 1))
        log_px = ad.gaussian_logpdf_rows(np.tile(batch.x_pre, (K, 1)), mu_x, sig_x, weight)
        logw = ad.add(ad.add(log_px, log_pz), ad.neg(log_q1))
    else:
        KM = K * M
        r_k = ad.tile_rows(r, K)
        mu_m, sig_m = encoder2(P, z, ad.tile_rows(x_pre, K), r_k, config)
        mu_mm, sig_mm = ad.tile_rows(mu_m, M), ad.tile_rows(sig_m, M)
        xm = ad.add(mu_mm, ad.mul(sig_mm, noise.xm.reshape(KM * n, p)))
        miss = np.tile(1.0 - batch.r, (KM, 1))
        log_q2 = ad.gaussian_logpdf_rows(xm, mu_mm, sig_mm, miss)
        x_comp = ad.add(np.tile(batch.x_obs, (KM, 1)), ad.mul(xm, miss))
        log_px = ad.gaussian_logpdf_rows(x_comp, ad.tile_rows(mu_x, M), ad.tile_rows(sig_x, M))
        logw = ad.add(log_px, ad.tile_rows(ad.add(log_pz, ad.neg(log_q1)), M))
        logw = ad.add(logw, ad.neg(log_q2))
        spec = params.mask_spec if mask_spec is None else mask_spec
        if include_mask and spec.modeled:
            z_m = ad.tile_rows(z, M) if spec.include_z else None
            logits = mask_logits(P, x_comp, z_m, spec, config)
            r_mod = np.tile(batch.r[:, list(spec.modeled)], (KM, 1))
            logw = ad.add(logw, ad.bernoulli_logpmf_rows(logits, r_mod))

    lw = _fold(logw, K * M, n)
    lse = ad.logsumexp_rows(lw)
    row_vals = lse.value[:, 0]
    finite = np.isfinite(row_vals)
    log_km = math.log(K * M)
    aborted = tuple(int(i) for i in np.flatnonzero(~finite))
    if aborted:
        bad = np.argwhere(~np.isfinite(lw.value))
        logger.warning("non-finite log-weights at (row, sample) %s; %d rows excluded", bad[:10].tolist(), len(aborted))
    if finite.any():
        kept = lse if not aborted else ad.select_rows(lse, np.flatnonzero(finite))
        objective = ad.shift(ad.mean_all(kept), -log_km)
        value = float(objective.value.item())
    else:
        objective, value = None, float("nan")
    estimate = BoundEstimate(value, lw.value.copy(), K, M, len(aborted), aborted)
    return BoundGraph(objective, estimate, xm, mu_x)


def _evaluate(params, batch, noise, kind, mask_spec=None, include_mask=True) -> BoundEstimate:
    tape = ad.Tape()
    P = bind(tape, params, trainable=False)
    return build_bound(tape, P, params, batch, noise, kind, mask_spec, include_mask).estimate


def elbo(params: ModelParams, batch: Batch, noise: Noise) -> BoundEstimate:
    if noise.K != 1:
        raise ValueError("elbo takes a single latent draw")
    return _evaluate(params, batch, noise, "elbo")


def iwae_bound(params: ModelParams, batch: Batch, noise: Noise, K: int | None = None) -> BoundEstimate:
    _check_k(noise, K)
    return _evaluate(params, batch, noise, "iwae")


def imiwae_bound(params: ModelParams, batch: Batch, noise: Noise, K: int | None = None) -> BoundEstimate:
    _check_k(noise, K)
    return _evaluate(params, batch, noise, "imiwae")


def nimiwae_bound(
    params: ModelParams,
    batch: Batch,
    noise: Noise,
    mask_spec: MaskModelSpec | None = None,
    K: int | None = None,
    M: int | None = None,
    include_mask: bool = True,
) -> BoundEstimate:
    _check_k(noise, K)
    if M is not None and noise.M != M:
        raise ValueError(f"noise carries M={noise.M} draws, expected {M}")
    return _evaluate(params, batch, noise, "nimiwae", mask_spec, include_mask)


def _check_k(noise, K):
    if K is not None and noise.K != K:
        raise ValueError(f"noise carries K={noise.K} draws, expected {K}")
