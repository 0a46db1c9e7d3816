"""Fused row kernels used by the autodiff engine.

The compiled extension ``_ckernels`` is used when it was built; otherwise the
NumPy module ``_pykernels`` is loaded. Setting ``NIMIWAE_PURE_PYTHON=1``
forces the fallback.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("NIMIWAE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

softplus = _active.softplus
sigmoid = _active.sigmoid
gauss_rows_fwd = _active.gauss_rows_fwd
gauss_rows_bwd = _active.gauss_rows_bwd
bern_logits_rows_fwd = _active.bern_logits_rows_fwd
bern_logits_rows_bwd = _active.bern_logits_rows_bwd
lse_rows_fwd = _active.lse_rows_fwd
lse_rows_bwd = _active.lse_rows_bwd

LOG_2PI = python_backend.LOG_2PI
PROB_CLAMP = python_backend.PROB_CLAMP

__all__ = [
    "BACKEND",
    "LOG_2PI",
    "PROB_CLAMP",
    "bern_logits_rows_bwd",
    "bern_logits_rows_fwd",
    "compiled_backend",
    "gauss_rows_bwd",
    "gauss_rows_fwd",
    "lse_rows_bwd",
    "lse_rows_fwd",
    "python_backend",
    "sigmoid",
    "softplus",
]
