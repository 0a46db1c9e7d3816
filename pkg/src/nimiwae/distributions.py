"""Diagonal-Gaussian and Bernoulli families.

These are plain NumPy evaluations on a single observation (vectors). The
batched, differentiable versions used inside the bounds are the tape
primitives :func:`nimiwae.autodiff.gaussian_logpdf_rows` and
:func:`nimiwae.autodiff.bernoulli_logpmf_rows`, which share the same kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

SIGMA_FLOOR = 1e-4
PROB_CLAMP = kernels.PROB_CLAMP


@dataclass
class DiagGaussianParams:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu shape {self.mu.shape} != sigma shape {self.sigma.shape}")


@dataclass
class BernoulliParams:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.clip(np.asarray(self.probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)


def sigma_from_raw(raw):
    """Positive scale from an unconstrained head: softplus(raw) + floor."""
    return kernels.softplus(np.atleast_2d(np.asarray(raw, dtype=np.float64))).reshape(np.shape(raw)) + SIGMA_FLOOR


def gaussian_logpdf(x, params: DiagGaussianParams) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != params.mu.shape:
        raise ValueError(f"x shape {x.shape} != mu shape {params.mu.shape}")
    if np.any(params.sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    rows = kernels.gauss_rows_fwd(
        np.atleast_2d(x), np.atleast_2d(params.mu), np.atleast_2d(params.sigma), None
    )
    return float(rows.sum())


def reparam_sample(params: DiagGaussianParams, eps) -> np.ndarray:
    """mu + sigma * eps, with the standard-normal noise supplied by the caller."""
    eps = np.asarray(eps, dtype=np.float64)
    # leading sample axes are allowed; trailing axes must match the parameters
    if eps.shape[eps.ndim - params.mu.ndim:] != params.mu.shape:
        raise ValueError(f"noise shape {eps.shape} incompatible with {params.mu.shape}")
    return params.mu + params.sigma * eps


def bernoulli_logpmf(r, params: BernoulliParams) -> float:
    r = np.asarray(r, dtype=np.float64)
    if not np.all((r == 0) | (r == 1)):
        raise ValueError("mask entries must be 0 or 1")
    if r.shape != params.probs.shape:
        raise ValueError(f"r shape {r.shape} != probs shape {params.probs.shape}")
    p = params.probs
    return float(np.sum(r * np.log(p) + (1.0 - r) * np.log1p(-p)))
