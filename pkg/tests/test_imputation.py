import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nimiwae import autodiff as ad
from nimiwae.bounds import Batch, build_bound, draw_noise
from nimiwae.dataio import MaskedDataset, split, standardize
from nimiwae.evaluate import average_l1
from nimiwae.imputation import impute, impute_matrix, mean_impute, softmax_rows
from nimiwae.networks import MaskModelSpec, NetworkConfig, bind, init_params
from nimiwae.training import TrainConfig, train


def masked_data(n=60, p=4, seed=0, cols=(2, 3), miss=0.4):
    rng = np.random.default_rng(seed)
    x = rng.normal(1.0, 2.0, size=(n, p))
    r = np.ones((n, p))
    r[:, list(cols)] = (rng.random((n, len(cols))) > miss).astype(float)
    return MaskedDataset(np.where(r == 1, x, 0.0), r), x


def bivariate(n, rho, seed, miss=0.3):
    rng = np.random.default_rng(seed)
    cov = np.array([[1.0, rho], [rho, 1.0]])
    x = rng.multivariate_normal([0.0, 0.0], cov, size=n)
    r = np.ones((n, 2))
    r[:, 1] = (rng.random(n) > miss).astype(float)
    return MaskedDataset(np.where(r == 1, x, 0.0), r), x


@pytest.fixture(scope="module")
def fitted():
    ds, x = masked_data()
    data = standardize(split(ds, 0))
    out = {}
    for kind in ("nimiwae", "imiwae"):
        cfg = TrainConfig(kind=kind, K=3, M=3, h=8, epochs=3, bs=20, seed=1)
        out[kind] = train(data, cfg)
    return data, x, out


class TestSoftmax:
    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (3, 7), elements=st.floats(-700, 700)))
    def test_rows_sum_to_one(self, logw):
        w = softmax_rows(logw)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.all(w >= 0)

    def test_non_finite_rows(self):
        w = softmax_rows(np.array([[-np.inf, -np.inf], [0.0, -np.inf]]))
        np.testing.assert_array_equal(w, [[0.0, 0.0], [1.0, 0.0]])

    def test_uniform(self):
        np.testing.assert_array_equal(softmax_rows(np.full((2, 4), -3.5)), 0.25)


class TestImpute:
    @pytest.mark.parametrize("kind", ["nimiwae", "imiwae"])
    def test_observed_cells_exact(self, fitted, kind):
        data, x, reps = fitted
        res = impute(reps[kind].params, data, K=4, M=4, seed=0, kind=kind)
        rows = data.rows("test")
        obs = data.mask[rows] == 1
        np.testing.assert_array_equal(res.imputed[obs], x[rows][obs])
        assert np.all(np.isfinite(res.imputed))

    def test_fully_observed_row_unchanged(self, fitted):
        data, x, reps = fitted
        res = impute(reps["nimiwae"].params, data, K=4, M=4, seed=0, split=None)
        full = np.flatnonzero(data.mask.min(axis=1) == 1)
        assert full.size
        np.testing.assert_array_equal(res.imputed[full], x[full])

    @pytest.mark.parametrize("kind", ["nimiwae", "imiwae"])
    def test_deterministic(self, fitted, kind):
        data, _, reps = fitted
        a = impute(reps[kind].params, data, K=5, M=5, seed=3, kind=kind)
        b = impute(reps[kind].params, data, K=5, M=5, seed=3, kind=kind)
        np.testing.assert_array_equal(a.imputed, b.imputed)
        c = impute(reps[kind].params, data, K=5, M=5, seed=4, kind=kind)
        assert not np.array_equal(a.imputed, c.imputed)

    def test_matches_bound_weights(self, fitted):
        data, _, reps = fitted
        params = reps["nimiwae"].params
        x, r = data.subset("test")
        K, M = 3, 4
        got, ess, _ = impute_matrix(params, x, r, None, "nimiwae", K, M, 9)
        b = Batch(x, r, np.zeros(data.p))
        noise = draw_noise(np.random.default_rng(9), b.n, params.config.dz, data.p, K, M)
        tape = ad.Tape()
        g = build_bound(tape, bind(tape, params, trainable=False), params, b, noise, "nimiwae")
        logw = g.estimate.log_weights
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        samples = g.xm.value.reshape(K * M, b.n, data.p)
        expected = np.einsum("sn,snp->np", w.T, samples)
        miss = r == 0
        np.testing.assert_allclose(got[miss], expected[miss], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(ess, 1.0 / (w * w).sum(axis=1), rtol=1e-12)

    def test_uniform_weights_give_plain_average(self, fitted, monkeypatch):
        data, _, reps = fitted
        params = reps["nimiwae"].params
        x, r = data.subset("test")
        import nimiwae.imputation as imp

        captured = {}
        real = imp.build_bound

        def spy(*args, **kwargs):
            g = real(*args, **kwargs)
            g.estimate.log_weights = np.zeros_like(g.estimate.log_weights)
            captured["xm"] = g.xm.value.copy()
            return g

        monkeypatch.setattr(imp, "build_bound", spy)
        got, ess, _ = impute_matrix(params, x, r, None, "nimiwae", 2, 3, 0, chunk=10_000)
        mean = captured["xm"].reshape(6, len(x), data.p).mean(axis=0)
        miss = r == 0
        np.testing.assert_allclose(got[miss], mean[miss], rtol=1e-12)
        np.testing.assert_allclose(ess, 6.0, rtol=1e-12)

    def test_mask_term_flag_changes_weights(self, fitted):
        data, _, reps = fitted
        params = reps["nimiwae"].params
        a = impute(params, data, K=4, M=4, seed=1)
        b = impute(params, data, K=4, M=4, seed=1, include_mask=False)
        miss = data.mask[data.rows("test")] == 0
        obs = ~miss
        np.testing.assert_array_equal(a.imputed[obs], b.imputed[obs])
        assert not np.allclose(a.imputed[miss], b.imputed[miss])

    def test_rejects_nan_params(self, fitted):
        data, _, reps = fitted
        params = reps["imiwae"].params
        bad = dict(params.arrays)
        bad["psi.b0"] = np.full_like(bad["psi.b0"], np.nan)
        with pytest.raises(ValueError):
            impute(params.replace_arrays(bad), data, kind="imiwae")

    def test_rejects_elbo_kind(self, fitted):
        data, _, reps = fitted
        with pytest.raises(ValueError):
            impute(reps["imiwae"].params, data, kind="iwae")

    def test_fallback_to_training_means(self, fitted, monkeypatch):
        data, x, reps = fitted
        import nimiwae.imputation as imp

        real = imp.build_bound

        def poisoned(*args, **kwargs):
            g = real(*args, **kwargs)
            g.estimate.log_weights = np.full_like(g.estimate.log_weights, -np.inf)
            return g

        monkeypatch.setattr(imp, "build_bound", poisoned)
        res = impute(reps["nimiwae"].params, data, K=2, M=2, seed=0)
        rows = data.rows("test")
        r = data.mask[rows]
        train_rows = data.rows("train")
        means = [x[train_rows][data.mask[train_rows][:, j] == 1, j].mean() for j in range(data.p)]
        expected = np.where(r == 1, x[rows], np.array(means)[None, :])
        np.testing.assert_allclose(res.imputed, expected, rtol=1e-12)
        assert res.n_fallback == len(rows)
        assert res.sidecar()["n_fallback"] == len(rows)


class TestConditionalGaussianOracle:
    @pytest.mark.parametrize("kind", ["nimiwae", "imiwae"])
    def test_near_conditional_expectation(self, kind):
        rho = 0.8
        ds, x = bivariate(1500, rho, seed=0)
        data = standardize(split(ds, 0))
        cfg = TrainConfig(kind=kind, K=5, M=5, h=32, nhl=1, dz=1, epochs=200, bs=100, lr=0.01, seed=0)
        rep = train(data, cfg)
        res = impute(rep.params, data, K=20, M=20, seed=0, kind=kind)
        rows = data.rows("test")
        r, truth = data.mask[rows], x[rows]
        l1 = average_l1(res.imputed, truth, r).avg_l1
        oracle = np.where(r == 1, truth, rho * truth[:, [0]])
        ref = average_l1(oracle, truth, r).avg_l1
        assert l1 < 1.10 * ref


class TestMeanImpute:
    def test_two_values(self):
        x = np.array([[1.0], [3.0], [0.0]])
        r = np.array([[1.0], [1.0], [0.0]])
        res = mean_impute(MaskedDataset(x, r), split=None)
        np.testing.assert_array_equal(res.imputed[:, 0], [1, 3, 2])

    def test_identity_without_missing(self):
        ds, x = masked_data(miss=0.0)
        res = mean_impute(standardize(split(ds, 1)))
        np.testing.assert_array_equal(res.imputed, x[split(ds, 1).rows("test")])

    def test_uses_training_means_only(self):
        ds, x = masked_data(n=50, seed=3)
        data = split(ds, 2)
        res = mean_impute(standardize(data))
        tr = data.rows("train")
        rows = data.rows("test")
        for j in (2, 3):
            miss = data.mask[rows][:, j] == 0
            expect = x[tr][data.mask[tr][:, j] == 1, j].mean()
            np.testing.assert_allclose(res.imputed[miss, j], expect, rtol=1e-12)
        assert data.test_reads() == [("impute", "test")]

    def test_fully_missing_column(self):
        x = np.zeros((6, 2))
        r = np.ones((6, 2))
        r[:, 1] = 0
        with pytest.raises(ValueError):
            mean_impute(MaskedDataset(x, r), split=None)

    def test_half_normal_l1(self):
        rng = np.random.default_rng(0)
        n = 10_000
        x = rng.standard_normal((n, 1))
        r = (rng.random((n, 1)) > 0.5).astype(float)
        data = standardize(split(MaskedDataset(np.where(r == 1, x, 0.0), r), 0))
        res = mean_impute(data, split=None)
        l1 = average_l1(res.imputed, x, r).avg_l1
        assert l1 == pytest.approx(np.sqrt(2 / np.pi), abs=0.02)
