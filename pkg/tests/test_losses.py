import numpy as np
import pytest

from stratport.exceptions import DomainError, InputError
from stratport.losses import (
    huber,
    huber_loss,
    logdet_loss,
    prox_huber_mean,
    prox_logdet_precision,
)

from reference import huber_prox_bisect


def _random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T + n * np.eye(n))


class TestHuber:
    def test_zero(self):
        assert huber(0.0, 0.01) == 0.0

    def test_quadratic_branch(self):
        assert huber(0.005, 0.01) == pytest.approx(2.5e-5, abs=1e-18)

    def test_linear_branch(self):
        assert huber(0.02, 0.01) == pytest.approx(3.0e-4, abs=1e-18)

    def test_loss_sums_entrywise(self):
        Y = np.array([[0.0, 0.02], [0.005, 0.0]])
        mu = np.zeros(2)
        expected = huber(0.02, 0.01) + huber(0.005, 0.01)
        assert huber_loss(mu, Y, 0.01) == pytest.approx(expected)

    def test_empty_stratum_zero_loss(self):
        assert huber_loss(np.zeros(3), np.zeros((0, 3)), 0.01) == 0.0

    def test_nonpositive_halfwidth(self):
        with pytest.raises(InputError):
            huber(1.0, 0.0)


class TestHuberProx:
    def test_no_data_returns_prox_point(self):
        v = np.array([0.3, -1.2])
        out = prox_huber_mean(v, np.zeros((0, 2)), 0.01, 2.0)
        assert np.array_equal(out, v)

    def test_zero_data_zero_point(self):
        out = prox_huber_mean(np.zeros(1), np.zeros((1, 1)), 0.01, 1.0)
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_linear_branch_closed_form(self):
        # one data point y=0, v=1, rho=1, M=0.01: stationarity on the
        # linear branch gives mu = 1 - 2M = 0.98
        out = prox_huber_mean(np.array([1.0]), np.array([[0.0]]), 0.01, 1.0)
        assert out[0] == pytest.approx(0.98, abs=1e-10)

    def test_matches_bisection_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            T = rng.integers(1, 9)
            y = rng.normal(scale=0.05, size=T)
            v = rng.normal(scale=0.05)
            rho = float(rng.uniform(0.1, 10))
            M = float(rng.uniform(0.001, 0.05))
            out = prox_huber_mean(np.array([v]), y.reshape(-1, 1), M, rho)
            expected = huber_prox_bisect(y, v, M, rho)
            assert out[0] == pytest.approx(expected, abs=1e-9)

    def test_stationarity_residual(self):
        rng = np.random.default_rng(12)
        M, rho = 0.01, 1.7
        for _ in range(20):
            y = rng.normal(scale=0.03, size=(6, 3))
            v = rng.normal(scale=0.03, size=3)
            mu = prox_huber_mean(v, y, M, rho)
            g = np.sum(2 * np.clip(mu[None, :] - y, -M, M), axis=0) + rho * (mu - v)
            assert np.max(np.abs(g)) <= 1e-10

    def test_invalid_rho(self):
        with pytest.raises(InputError):
            prox_huber_mean(np.zeros(1), np.zeros((1, 1)), 0.01, 0.0)


class TestLogdetLoss:
    def test_inverse_recovers_dimension(self):
        rng = np.random.default_rng(13)
        S = _random_spd(rng, 4)
        theta = np.linalg.inv(S)
        sign, logdet = np.linalg.slogdet(S)
        assert logdet_loss(theta, S) == pytest.approx(4 + logdet, rel=1e-10)

    def test_eigenvalue_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(25):
            theta = _random_spd(rng, 3)
            S = _random_spd(rng, 3, scale=0.5)
            expected = float(np.trace(S @ theta)) - float(
                np.sum(np.log(np.linalg.eigvalsh(theta)))
            )
            assert logdet_loss(theta, S) == pytest.approx(expected, abs=1e-9)

    def test_non_spd_domain_error(self):
        with pytest.raises(DomainError):
            logdet_loss(np.diag([1.0, -1.0]), np.eye(2))


class TestLogdetProx:
    def test_drop_mode_is_symmetrized_identity_map(self):
        rng = np.random.default_rng(15)
        V = rng.normal(size=(4, 4))
        out = prox_logdet_precision(V, np.zeros((4, 4)), 1.0, include_loss=False)
        assert np.allclose(out, 0.5 * (V + V.T), atol=0)

    def test_golden_ratio_case(self):
        out = prox_logdet_precision(np.eye(3), np.zeros((3, 3)), 1.0)
        phi = (1 + np.sqrt(5)) / 2
        assert np.allclose(out, phi * np.eye(3), atol=1e-10)

    def test_large_rho_limit(self):
        rng = np.random.default_rng(16)
        V = _random_spd(rng, 5)
        S = _random_spd(rng, 5, scale=0.3)
        out = prox_logdet_precision(V, S, 1e8)
        assert np.linalg.norm(out - V) <= 1e-6 * np.linalg.norm(V)

    def test_stationarity_residual_random(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            V = rng.normal(size=(n, n))
            V = 0.5 * (V + V.T)
            A = rng.normal(size=(n, n))
            S = A @ A.T
            rho = float(rng.uniform(0.05, 20))
            theta = prox_logdet_precision(V, S, rho)
            resid = rho * (theta - V) + S - np.linalg.inv(theta)
            assert np.linalg.norm(resid) <= 1e-8 * (1 + np.linalg.norm(V))
            assert np.allclose(theta, theta.T, atol=1e-13)
            assert np.linalg.eigvalsh(theta).min() > 0
