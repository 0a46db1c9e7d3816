"""TOML run configuration: defaults, validation and command-line overrides."""

from __future__ import annotations

import copy
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "data": {
        "source": "simulate",
        "path": "",
        "drop_columns": [],
        "missing_tokens": ["", "NA", "NaN", "nan"],
        "n": 2000,
        "p": 8,
        "d": 2,
        "fraction_of": "all",
        "coef_log_mean": 5.0,
        "coef_log_sd": 0.2,
        "coef_parameterization": "log",
        "missing_features": [],
    },
    "model": {
        "h": 64,
        "nhl": 1,
        "dz": 2,
        "activation": "tanh",
        "pre_impute": "zero",
        "mask_include_z": False,
        "mask_nhl": 0,
        "mask_h": 64,
    },
    "training": {
        "K": 5,
        "M": 5,
        "lr": 0.01,
        "bs": 200,
        "epochs": 500,
        "valid_K": 5,
        "valid_M": 5,
        "selection": "bound",
        "grid": False,
        "grid_h": [128, 64],
        "grid_lr": [0.001, 0.01],
        "grid_dz": [4, 2],
        "grid_nhl": [1, 2],
    },
    "imputation": {
        "K": 20,
        "M": 20,
        "include_mask": True,
    },
    "experiment": {
        "methods": ["nimiwae", "imiwae", "mean"],
        "replicates": [1],
        "mechanisms": ["MNAR"],
        "pct_missing": [25],
        "output_dir": "results",
        "workers": 1,
        "record_timing": False,
    },
}

METHODS = ("nimiwae", "imiwae", "mean")


def _check_type(section, key, value, default):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")
    return float(value) if isinstance(default, float) else value


def validate(cfg: dict) -> dict:
    """Merge over defaults and check keys, types and allowed values."""
    out = copy.deepcopy(DEFAULTS)
    for section, body in cfg.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            out[section][key] = _check_type(section, key, value, DEFAULTS[section][key])

    data, exp, tr = out["data"], out["experiment"], out["training"]
    if data["source"] not in ("simulate", "csv"):
        raise ConfigError("data.source must be 'simulate' or 'csv'")
    if data["source"] == "csv" and not data["path"]:
        raise ConfigError("data.path is required when data.source = 'csv'")
    bad = set(exp["methods"]) - set(METHODS)
    if bad or not exp["methods"]:
        raise ConfigError(f"experiment.methods must be a non-empty subset of {METHODS}; got {exp['methods']}")
    bad = set(exp["mechanisms"]) - {"MCAR", "MAR", "MNAR"}
    if bad or not exp["mechanisms"]:
        raise ConfigError(f"unknown mechanisms {sorted(bad)}")
    if not exp["replicates"] or not all(isinstance(s, int) and s >= 0 for s in exp["replicates"]):
        raise ConfigError("experiment.replicates must be a non-empty list of non-negative integer seeds")
    if not exp["pct_missing"] or not all(isinstance(v, (int, float)) and 0 < v < 100 for v in exp["pct_missing"]):
        raise ConfigError("experiment.pct_missing must list percentages in (0, 100)")
    if exp["workers"] < 1:
        raise ConfigError("experiment.workers must be >= 1")
    if tr["epochs"] < 1 or tr["bs"] < 1 or tr["K"] < 1 or tr["M"] < 1 or tr["lr"] < 0:
        raise ConfigError("training needs epochs, bs, K, M >= 1 and lr >= 0")
    if tr["selection"] not in ("bound", "masked_l1"):
        raise ConfigError("training.selection must be 'bound' or 'masked_l1'")
    if out["model"]["pre_impute"] not in ("zero", "mean"):
        raise ConfigError("model.pre_impute must be 'zero' or 'mean'")
    if out["model"]["activation"] not in ("tanh", "relu"):
        raise ConfigError("model.activation must be 'tanh' or 'relu'")
    return out


def parse_override(text: str) -> tuple[str, str, object]:
    """``section.key=value`` with the value in TOML syntax (bare words become strings)."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    lhs, raw = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return section, key, value


def load_config(path=None, overrides=()) -> dict:
    raw = {}
    if path is not None:
        try:
            raw = tomllib.loads(Path(path).read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        if isinstance(item, str):
            item = parse_override(item)
        section, key, value = item
        raw.setdefault(section, {})[key] = value
    return validate(raw)
