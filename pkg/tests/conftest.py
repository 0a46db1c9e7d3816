import math

import numpy as np
import pytest

from nimiwae.networks import MaskModelSpec, NetworkConfig, init_params


def softplus_inv(y):
    return math.log(math.expm1(y))


def linear_gaussian_model(w=1.2, b=0.3, s=0.8, enc_gain=0.5, enc_scale=0.7):
    """p=1, dz=1 affine model: z ~ N(0,1), x|z ~ N(w z + b, s^2).

    The encoder is affine in x with constant scale, deliberately not the
    exact posterior. Returns (params, log p(x) callable).
    """
    cfg = NetworkConfig(p=1, dz=1, h=1, nhl=0)
    params = init_params(cfg, MaskModelSpec(), 0)
    a = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    a["theta1.W0"][0, 0] = enc_gain
    a["theta1.b0"][0, 1] = softplus_inv(enc_scale - 1e-4)
    a["psi.W0"][0, 0] = w
    a["psi.b0"][0, 0] = b
    a["psi.b0"][0, 1] = softplus_inv(s - 1e-4)
    var = w * w + s * s

    def log_px(x):
        return -0.5 * (math.log(2 * math.pi * var) + (np.asarray(x) - b) ** 2 / var)

    return params.replace_arrays(a), log_px


@pytest.fixture
def small_model():
    cfg = NetworkConfig(p=4, dz=2, h=6, nhl=1)
    return init_params(cfg, MaskModelSpec(modeled=(2, 3)), 3)


@pytest.fixture
def small_batch():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 4))
    r = np.ones((6, 4))
    r[:, 2:] = (rng.random((6, 2)) < 0.5).astype(float)
    r[0] = 1.0
    return x, r


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
