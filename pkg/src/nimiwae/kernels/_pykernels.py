"""NumPy implementations of the fused row kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature. Inputs are 2-D float64 arrays; row reductions return 1-D arrays.
"""

import numpy as np
from scipy.special import expit

LOG_2PI = float(np.log(2.0 * np.pi))
PROB_CLAMP = 1e-7


def softplus(a):
    return np.logaddexp(0.0, a)


def sigmoid(a):
    return expit(a)


def gauss_rows_fwd(x, mu, sigma, w=None):
    z = (x - mu) / sigma
    terms = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z
    if w is not None:
        terms = terms * w
    return terms.sum(axis=1)


def gauss_rows_bwd(x, mu, sigma, w, g):
    """Return (dx, dmu, dsigma) given the upstream row adjoint ``g``.

    Entries with a zero adjoint contribute exactly zero, even where the
    forward value overflowed (e.g. rows excluded from the objective).
    """
    z = (x - mu) / sigma
    gw = g[:, None] if w is None else g[:, None] * w
    gw = np.broadcast_to(gw, z.shape)
    live = gw != 0
    dx = np.zeros_like(z)
    dsigma = np.zeros_like(z)
    dx[live] = -gw[live] * z[live] / sigma[live]
    dsigma[live] = gw[live] * (z[live] * z[live] - 1.0) / sigma[live]
    return dx, -dx, dsigma


def _clamped_probs(logits):
    return np.clip(sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)


def bern_logits_rows_fwd(logits, r, w=None):
    p = _clamped_probs(logits)
    terms = r * np.log(p) + (1.0 - r) * np.log1p(-p)
    if w is not None:
        terms = terms * w
    return terms.sum(axis=1)


def bern_logits_rows_bwd(logits, r, w, g):
    s = sigmoid(logits)
    inside = (s > PROB_CLAMP) & (s < 1.0 - PROB_CLAMP)
    d = np.where(inside, r - s, 0.0)
    if w is not None:
        d = d * w
    return d * g[:, None]


def lse_rows_fwd(a):
    m = a.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))
    out[np.isneginf(m)] = -np.inf
    return out


def lse_rows_bwd(a, out, g):
    ok = np.isfinite(out)
    safe = np.where(ok, out, 0.0)
    soft = np.exp(a - safe[:, None])
    soft[~ok] = 0.0
    return soft * g[:, None]
