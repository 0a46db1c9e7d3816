"""The four networks: Encoder 1, Decoder 1, Encoder 2 and the mask decoder.

Parameters live in a :class:`ModelParams` mapping of ``"<group>.W<i>"`` /
``"<group>.b<i>"`` arrays, with groups ``theta1`` (Encoder 1), ``psi``
(Decoder 1), ``theta2`` (Encoder 2) and ``phi`` (mask decoder). Gaussian heads
output ``2 * dim`` columns: the mean, then an unconstrained scale mapped
through softplus plus a small floor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .distributions import SIGMA_FLOOR, BernoulliParams, DiagGaussianParams

GROUPS = ("theta1", "psi", "theta2", "phi")
ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu, "sigmoid": ad.sigmoid}


@dataclass(frozen=True)
class NetworkConfig:
    p: int
    dz: int = 2
    h: int = 64
    nhl: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        if self.p < 1 or self.dz < 1 or self.h < 1 or self.nhl < 0:
            raise ValueError(f"invalid network config {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class MaskModelSpec:
    """Which covariates feed the mask decoder and which mask columns it models.

    ``covariates=None`` means all features. ``modeled`` lists the feature
    columns whose missingness is modeled; normally the columns with at least
    one missing entry in the training split (see :meth:`for_mask`).
    """

    modeled: tuple = ()
    covariates: tuple | None = None
    include_z: bool = False
    mode: str = "logistic"
    nhl: int = 0
    h: int = 64

    def __post_init__(self):
        object.__setattr__(self, "modeled", tuple(int(j) for j in self.modeled))
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(int(j) for j in self.covariates))
        if self.mode not in ("logistic", "deep"):
            raise ValueError(f"unknown mask model mode {self.mode!r}")
        if self.mode == "logistic" and self.nhl != 0:
            raise ValueError("logistic mask model must have nhl=0")
        if self.mode == "deep" and self.nhl < 1:
            raise ValueError("deep mask model needs nhl >= 1")

    @classmethod
    def for_mask(cls, train_mask, **kwargs) -> "MaskModelSpec":
        modeled = np.flatnonzero((np.asarray(train_mask) == 0).any(axis=0))
        return cls(modeled=tuple(modeled), **kwargs)

    def covariate_index(self, p: int) -> np.ndarray:
        idx = np.arange(p) if self.covariates is None else np.asarray(self.covariates, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= p):
            raise IndexError(f"mask covariate index out of range for p={p}")
        return idx

    def n_inputs(self, p: int, dz: int) -> int:
        return len(self.covariate_index(p)) + (dz if self.include_z else 0)


def layer_sizes(config: NetworkConfig, mask_spec: MaskModelSpec) -> dict[str, list[int]]:
    p, dz, h, nhl = config.p, config.dz, config.h, config.nhl
    sizes = {
        "theta1": [2 * p] + [h] * nhl + [2 * dz],
        "psi": [dz] + [h] * nhl + [2 * p],
        "theta2": [dz + 2 * p] + [h] * nhl + [2 * p],
    }
    if mask_spec.modeled:
        sizes["phi"] = [mask_spec.n_inputs(p, dz)] + [mask_spec.h] * mask_spec.nhl + [len(mask_spec.modeled)]
    return sizes


class ModelParams:
    """Ordered named weight arrays plus the configuration that shaped them."""

    def __init__(self, arrays: dict, config: NetworkConfig, mask_spec: MaskModelSpec):
        self.arrays = dict(arrays)
        self.config = config
        self.mask_spec = mask_spec

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def names(self, group: str | None = None) -> list[str]:
        if group is None:
            return list(self.arrays)
        return [k for k in self.arrays if k.split(".", 1)[0] == group]

    def has_group(self, group: str) -> bool:
        return bool(self.names(group))

    def replace_arrays(self, arrays: dict) -> "ModelParams":
        merged = dict(self.arrays)
        merged.update(arrays)
        return ModelParams(merged, self.config, self.mask_spec)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.config, self.mask_spec)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def equals(self, other: "ModelParams") -> bool:
        return (
            list(self.arrays) == list(other.arrays)
            and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)
            and self.config == other.config
            and self.mask_spec == other.mask_spec
        )

    def to_dict(self) -> dict:
        return {
            "format": "nimiwae-params",
            "version": 1,
            "config": asdict(self.config),
            "mask_spec": asdict(self.mask_spec),
            "arrays": [
                {"name": k, "shape": list(v.shape), "values": v.ravel(order="C").tolist()}
                for k, v in self.arrays.items()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        if d.get("format") != "nimiwae-params":
            raise ValueError("not a nimiwae parameter checkpoint")
        config = NetworkConfig(**d["config"])
        ms = dict(d["mask_spec"])
        if ms.get("covariates") is not None:
            ms["covariates"] = tuple(ms["covariates"])
        ms["modeled"] = tuple(ms["modeled"])
        arrays = {
            a["name"]: np.asarray(a["values"], dtype=np.float64).reshape(a["shape"]) for a in d["arrays"]
        }
        return cls(arrays, config, MaskModelSpec(**ms))

    def save(self, path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d["extra"] = extra
        Path(path).write_text(json.dumps(d))

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(config: NetworkConfig, mask_spec: MaskModelSpec, rng_seed) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic given the seed."""
    rng = np.random.default_rng(rng_seed)
    arrays = {}
    for group, sizes in layer_sizes(config, mask_spec).items():
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[f"{group}.W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            arrays[f"{group}.b{i}"] = np.zeros((1, fan_out))
    return ModelParams(arrays, config, mask_spec)


# ---------------------------------------------------------------------------
# tape-level forwards; ``P`` maps parameter names to Vars on the same tape


def bind(tape: ad.Tape, params: ModelParams, trainable=True) -> dict:
    if trainable:
        return {k: tape.param(v, k) for k, v in params.arrays.items()}
    return {k: tape.const(v) for k, v in params.arrays.items()}


def mlp(P: dict, group: str, x: ad.Var, activation: str) -> ad.Var:
    n_layers = sum(1 for k in P if k.startswith(group + ".W"))
    act = ACTIVATIONS[activation]
    out = x
    for i in range(n_layers):
        out = ad.add(ad.matmul(out, P[f"{group}.W{i}"]), P[f"{group}.b{i}"])
        if i < n_layers - 1:
            out = act(out)
    return out


def gaussian_head(out: ad.Var, dim: int):
    mu = ad.slice_cols(out, 0, dim)
    sigma = ad.shift(ad.softplus(ad.slice_cols(out, dim, 2 * dim)), SIGMA_FLOOR)
    return mu, sigma


def encoder1(P, x_pre: ad.Var, r: ad.Var, config: NetworkConfig):
    out = mlp(P, "theta1", ad.concat_cols([x_pre, r]), config.activation)
    return gaussian_head(out, config.dz)


def decoder1(P, z: ad.Var, config: NetworkConfig):
    return gaussian_head(mlp(P, "psi", z, config.activation), config.p)


def encoder2(P, z: ad.Var, x_pre: ad.Var, r: ad.Var, config: NetworkConfig):
    out = mlp(P, "theta2", ad.concat_cols([z, x_pre, r]), config.activation)
    return gaussian_head(out, config.p)


def mask_logits(P, x_completed: ad.Var, z: ad.Var | None, spec: MaskModelSpec, config: NetworkConfig):
    idx = spec.covariate_index(x_completed.shape[1])
    cov = x_completed if np.array_equal(idx, np.arange(x_completed.shape[1])) else ad.take_cols(x_completed, idx)
    if spec.include_z:
        if z is None:
            raise ValueError("mask model includes z but no z was given")
        cov = ad.concat_cols([cov, z])
    return mlp(P, "phi", cov, config.activation)


# ---------------------------------------------------------------------------
# NumPy-facing wrappers


def _consts(params):
    tape = ad.Tape()
    return tape, bind(tape, params, trainable=False)


def encoder1_forward(params: ModelParams, x_preimputed, r) -> DiagGaussianParams:
    tape, P = _consts(params)
    x_preimputed, r = np.atleast_2d(x_preimputed), np.atleast_2d(r)
    _check_width(x_preimputed, params.config.p, "x_preimputed")
    _check_width(r, params.config.p, "r")
    mu, sigma = encoder1(P, tape.const(x_preimputed), tape.const(r), params.config)
    return DiagGaussianParams(mu.value, sigma.value)


def decoder1_forward(params: ModelParams, z) -> DiagGaussianParams:
    tape, P = _consts(params)
    z = np.asarray(z, dtype=np.float64)
    lead = z.shape[:-1]
    z2 = z.reshape(-1, z.shape[-1])
    _check_width(z2, params.config.dz, "z")
    mu, sigma = decoder1(P, tape.const(z2), params.config)
    p = params.config.p
    return DiagGaussianParams(mu.value.reshape(*lead, p), sigma.value.reshape(*lead, p))


def encoder2_forward(params: ModelParams, z, x_preimputed, r) -> DiagGaussianParams:
    tape, P = _consts(params)
    z, x_preimputed, r = np.atleast_2d(z), np.atleast_2d(x_preimputed), np.atleast_2d(r)
    _check_width(z, params.config.dz, "z")
    _check_width(x_preimputed, params.config.p, "x_preimputed")
    mu, sigma = encoder2(P, tape.const(z), tape.const(x_preimputed), tape.const(r), params.config)
    return DiagGaussianParams(mu.value, sigma.value)


def mask_decoder_forward(params: ModelParams, x_completed, z=None, spec: MaskModelSpec | None = None) -> BernoulliParams:
    spec = params.mask_spec if spec is None else spec
    tape, P = _consts(params)
    x_completed = np.atleast_2d(x_completed)
    zv = None if z is None else tape.const(np.atleast_2d(z))
    logits = mask_logits(P, tape.const(x_completed), zv, spec, params.config)
    return BernoulliParams(ad.sigmoid(logits).value)


def _check_width(a, width, label):
    if a.shape[1] != width:
        raise ValueError(f"{label} has {a.shape[1]} columns, expected {width}")


def with_mask_spec(params: ModelParams, **changes) -> ModelParams:
    return ModelParams(params.arrays, params.config, replace(params.mask_spec, **changes))


__all__ = [
    "GROUPS",
    "MaskModelSpec",
    "ModelParams",
    "NetworkConfig",
    "bind",
    "decoder1",
    "decoder1_forward",
    "encoder1",
    "encoder1_forward",
    "encoder2",
    "encoder2_forward",
    "init_params",
    "layer_sizes",
    "mask_decoder_forward",
    "mask_logits",
    "mlp",
]
