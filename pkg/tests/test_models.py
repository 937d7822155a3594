import numpy as np
import pytest

from stratport.exceptions import InputError, UndefinedMetricError
from stratport.fitting import StratumDataset
from stratport.grid import build_product_chain_graph
from stratport.models import (
    MeanModel,
    PrecisionModel,
    common_mean,
    common_precision,
    correlation_summary,
    fit_return_model,
    fit_risk_model,
    load_model,
    mean_summary,
    save_model,
    validation_correlation,
    validation_nll,
    volatility_summary,
)

from reference import pearson_two_pass


def _labeled(rng, K, n, per, mean_fn, cov_fn):
    z, rows = [], []
    for k in range(K):
        cov = cov_fn(k)
        chol = np.linalg.cholesky(cov)
        for _ in range(per):
            z.append(k + 1)
            rows.append(mean_fn(k) + chol @ rng.standard_normal(n))
    return np.array(z), np.array(rows)


class TestFitWrappers:
    def test_return_model_recovers_synthetic_means(self):
        rng = np.random.default_rng(60)
        K, n, per = 4, 3, 200
        g = build_product_chain_graph((K,), ("vol",))
        true_mu = np.array([[0.001 * (k - 1.5)] * n for k in range(K)])
        sd = 0.01
        z, Y = _labeled(
            rng, K, n, per, lambda k: true_mu[k], lambda k: sd**2 * np.eye(n)
        )
        train = StratumDataset.from_records(z, Y, K)
        model = fit_return_model(
            train, g, local_gamma=0.001, edge_gammas={"vol": 1.0}, assets=("a", "b", "c")
        )
        se = sd / np.sqrt(per)
        assert np.all(np.abs(model.mu - true_mu) < 3 * se + 1e-4)
        assert model.meta["converged"]

    def test_ridge_dominated_limit_zeroes_forecasts(self):
        rng = np.random.default_rng(61)
        g = build_product_chain_graph((2,), ("vol",))
        z, Y = _labeled(rng, 2, 2, 30, lambda k: np.full(2, 0.01), lambda k: 1e-4 * np.eye(2))
        train = StratumDataset.from_records(z, Y, 2)
        model = fit_return_model(
            train,
            g,
            local_gamma=1e9,
            edge_gammas={"vol": 1.0},
            rho=100.0,
            tol_abs=1e-9,
            tol_rel=1e-8,
            max_iter=20000,
        )
        assert np.max(np.abs(model.mu)) < 1e-6

    def test_risk_model_single_stratum_is_mle(self):
        rng = np.random.default_rng(62)
        g = build_product_chain_graph((1,), ("vol",))
        z, Y = _labeled(rng, 1, 2, 60, lambda k: np.zeros(2), lambda k: np.eye(2))
        train = StratumDataset.from_records(z, Y, 1)
        model = fit_risk_model(
            train, g, edge_gammas={"vol": 0.0}, tol_abs=1e-12, tol_rel=1e-11, max_iter=50000
        )
        expected = np.linalg.inv(train.second_moments()[0])
        assert np.allclose(model.theta[0], expected, atol=1e-8)

    def test_risk_model_separates_two_regimes(self):
        rng = np.random.default_rng(63)
        g = build_product_chain_graph((2,), ("vol",))
        covs = [np.array([[1.0, 0.8], [0.8, 1.0]]), np.array([[1.0, -0.8], [-0.8, 1.0]])]
        z, Y = _labeled(rng, 2, 2, 150, lambda k: np.zeros(2), lambda k: covs[k])
        train = StratumDataset.from_records(z, Y, 2)
        model = fit_risk_model(train, g, edge_gammas={"vol": 0.5})
        for k in range(2):
            own = np.linalg.norm(model.covariance(k + 1) - covs[k])
            other = np.linalg.norm(model.covariance(k + 1) - covs[1 - k])
            assert own < other


class TestMetrics:
    def test_perfect_predictions_correlate_to_one(self):
        K, n = 3, 2
        mu = np.arange(K * n, dtype=float).reshape(K, n)
        model = MeanModel(mu, ("a", "b"))
        z = np.array([1, 2, 3, 2])
        Y = mu[z - 1]
        assert validation_correlation(model, z, Y) == pytest.approx(1.0)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(64)
        model = MeanModel(rng.normal(size=(5, 3)), ("a", "b", "c"))
        z = rng.integers(1, 6, size=40)
        Y = rng.normal(size=(40, 3))
        got = validation_correlation(model, z, Y)
        expected = pearson_two_pass(model.mu[z - 1].ravel(), Y.ravel())
        assert got == pytest.approx(expected, abs=1e-12)

    def test_affine_invariance_positive_slope(self):
        rng = np.random.default_rng(65)
        mu = rng.normal(size=(4, 2))
        z = rng.integers(1, 5, size=30)
        Y = rng.normal(size=(30, 2))
        base = validation_correlation(MeanModel(mu, ("a", "b")), z, Y)
        scaled = validation_correlation(MeanModel(3.7 * mu + 0.2, ("a", "b")), z, Y)
        assert scaled == pytest.approx(base, abs=1e-10)

    def test_constant_predictions_undefined(self):
        model = MeanModel(np.zeros((3, 2)), ("a", "b"))
        z = np.array([1, 2])
        Y = np.ones((2, 2))
        with pytest.raises(UndefinedMetricError):
            validation_correlation(model, z, Y)

    def test_nll_scalar_case(self):
        model = PrecisionModel(np.ones((1, 1, 1)), ("a",))
        assert validation_nll(model, np.array([1]), np.array([[1.0]])) == pytest.approx(1.0)

    def test_nll_matches_direct_sum(self):
        rng = np.random.default_rng(66)
        K, n = 4, 3
        theta = np.array([np.linalg.inv(_spd(rng, n)) for _ in range(K)])
        model = PrecisionModel(theta, tuple("abc"))
        z = rng.integers(1, K + 1, size=25)
        Y = rng.normal(size=(25, n))
        expected = np.mean(
            [
                Y[t] @ theta[z[t] - 1] @ Y[t] - np.linalg.slogdet(theta[z[t] - 1])[1]
                for t in range(25)
            ]
        )
        assert validation_nll(model, z, Y) == pytest.approx(expected, abs=1e-10)

    def test_common_model_nll_identity(self):
        # on its own training data the pooled model's loss is n + logdet(S)
        rng = np.random.default_rng(67)
        Y = rng.normal(size=(300, 3))
        z = np.ones(300, dtype=int)
        train = StratumDataset.from_records(z, Y, 1)
        theta = common_precision(train)
        model = PrecisionModel.constant(theta, 1, tuple("abc"))
        S = (Y.T @ Y) / len(Y)
        expected = 3 + np.linalg.slogdet(S)[1]
        assert validation_nll(model, z, Y) == pytest.approx(expected, abs=1e-8)


def _spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T / n + np.eye(n)


class TestSummaries:
    def test_constant_model_collapses_stats(self):
        theta = np.linalg.inv(np.diag([1e-4, 4e-4]))
        model = PrecisionModel.constant(theta, 7, ("a", "b"))
        table = volatility_summary(model, theta)
        assert np.allclose(table["median"], table["min"])
        assert np.allclose(table["median"], table["max"])
        # 1% and 2% daily vol
        assert table.loc["a", "median"] == pytest.approx(1.0)
        assert table.loc["b", "median"] == pytest.approx(2.0)

    def test_reference_asset_self_correlation(self):
        rng = np.random.default_rng(68)
        theta = np.array([np.linalg.inv(_spd(rng, 3)) for _ in range(5)])
        model = PrecisionModel(theta, ("AGG", "x", "y"))
        table = correlation_summary(model, theta[0], reference_asset="AGG")
        assert np.allclose(table.loc["AGG"], 1.0)

    def test_correlations_inside_unit_interval(self):
        rng = np.random.default_rng(69)
        theta = np.array([np.linalg.inv(_spd(rng, 4)) for _ in range(10)])
        model = PrecisionModel(theta, ("AGG", "b", "c", "d"))
        table = correlation_summary(model, theta[3])
        assert (table[["median", "min", "max"]].to_numpy() <= 1 + 1e-10).all()
        assert (table[["median", "min", "max"]].to_numpy() >= -1 - 1e-10).all()

    def test_mean_summary_in_percent(self):
        model = MeanModel(np.full((4, 2), 0.001), ("a", "b"))
        table = mean_summary(model, np.array([0.0005, -0.0005]))
        assert table.loc["a", "median"] == pytest.approx(0.1)
        assert table.loc["a", "common"] == pytest.approx(0.05)


class TestSerialization:
    def test_mean_roundtrip(self, tmp_path):
        rng = np.random.default_rng(70)
        model = MeanModel(rng.normal(size=(6, 3)), ("a", "b", "c"), {"note": "x"})
        path = tmp_path / "mean_model.txt"
        save_model(model, path)
        back = load_model(path)
        assert isinstance(back, MeanModel)
        assert np.array_equal(back.mu, model.mu)
        assert back.assets == model.assets

    def test_precision_roundtrip(self, tmp_path):
        rng = np.random.default_rng(71)
        theta = np.array([np.linalg.inv(_spd(rng, 3)) for _ in range(4)])
        theta = 0.5 * (theta + np.swapaxes(theta, 1, 2))
        model = PrecisionModel(theta, ("a", "b", "c"))
        path = tmp_path / "risk_model.txt"
        save_model(model, path)
        back = load_model(path)
        assert isinstance(back, PrecisionModel)
        assert np.array_equal(back.theta, model.theta)

    def test_byte_stable(self, tmp_path):
        rng = np.random.default_rng(72)
        model = MeanModel(rng.normal(size=(3, 2)), ("a", "b"))
        p1, p2 = tmp_path / "m1.txt", tmp_path / "m2.txt"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestCommonBaselines:
    def test_common_mean_is_pooled_average(self):
        rng = np.random.default_rng(73)
        Y = rng.normal(size=(50, 3))
        z = rng.integers(1, 5, size=50)
        train = StratumDataset.from_records(z, Y, 4)
        assert np.allclose(common_mean(train), Y.mean(axis=0))

    def test_common_precision_inverts_second_moment(self):
        rng = np.random.default_rng(74)
        Y = rng.normal(size=(80, 2))
        train = StratumDataset.from_records(np.ones(80, dtype=int), Y, 1)
        S = (Y.T @ Y) / 80
        assert np.allclose(common_precision(train), np.linalg.inv(S), atol=1e-10)

    def test_empty_train_rejected(self):
        train = StratumDataset.from_records(np.zeros(0, dtype=int), np.zeros((0, 2)), 3)
        with pytest.raises(InputError):
            common_mean(train)
