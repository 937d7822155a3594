import numpy as np
import pytest

from stratport.exceptions import InputError, PolicyInfeasibleError
from stratport.policy import (
    PolicyInput,
    PolicyParams,
    augment_with_benchmark,
    default_params,
    policy_objective,
    solve_policy,
)
from stratport.presets import TUNED_POLICY_GAMMAS

from policy_reference import solve_reference


def _random_spd(rng, n, vol=0.01):
    A = rng.normal(size=(n, n))
    cov = A @ A.T / n + np.eye(n)
    d = np.sqrt(np.diag(cov))
    corr = cov / np.outer(d, d)
    vols = vol * rng.uniform(0.5, 2.0, size=n)
    return corr * np.outer(vols, vols)


def _random_instance(rng, n_assets):
    """Random policy input with the last asset as benchmark.

    Risky vols are kept small enough that the budget is always reachable
    inside the risk cap, so every instance is feasible.
    """
    n = n_assets
    mu_r = rng.normal(scale=2e-3, size=n - 1)
    cov_r = _random_spd(rng, n - 1, vol=0.003)
    mu, cov = augment_with_benchmark(mu_r, cov_r, n - 1)
    w_prev = rng.dirichlet(np.ones(n))
    tau = rng.uniform(0.0, 1e-3, size=n)
    inp = PolicyInput(mu=mu, cov=cov, w_prev=w_prev, tau=tau, benchmark=n - 1)
    params = default_params(n).with_gammas(
        float(rng.uniform(0.1, 5.0)), float(rng.uniform(0.1, 5.0))
    )
    return inp, params


class TestAugment:
    def test_adds_one_zero_eigenvalue(self):
        rng = np.random.default_rng(40)
        cov = _random_spd(rng, 5)
        _, full = augment_with_benchmark(np.zeros(5), cov, 2)
        before = np.sum(np.linalg.eigvalsh(cov) < 1e-12)
        after = np.sum(np.linalg.eigvalsh(full) < 1e-12)
        assert after == before + 1

    def test_benchmark_portfolio_is_riskless(self):
        rng = np.random.default_rng(41)
        mu, cov = augment_with_benchmark(rng.normal(size=4), _random_spd(rng, 4), 0)
        e = np.zeros(5)
        e[0] = 1.0
        assert e @ cov @ e == 0.0
        assert mu[0] == 0.0

    def test_subblock_preserved(self):
        rng = np.random.default_rng(42)
        cov = _random_spd(rng, 4)
        _, full = augment_with_benchmark(np.zeros(4), cov, 2)
        idx = [0, 1, 3, 4]
        assert np.array_equal(full[np.ix_(idx, idx)], cov)


class TestParams:
    def test_defaults_match_study_constants(self):
        p = default_params(18)
        assert np.all(p.kappa == 0.0005)
        assert p.sigma == 0.0045
        assert p.leverage_max == 2.0
        assert np.all(p.w_min == -0.25) and np.all(p.w_max == 0.4)
        assert p.gamma_sc is None and p.gamma_tc is None

    def test_sigma_annualizes_to_about_seven_percent(self):
        p = default_params(18)
        assert np.sqrt(250) * p.sigma == pytest.approx(0.0712, abs=2e-4)

    def test_tuned_gamma_presets(self):
        assert TUNED_POLICY_GAMMAS["stratified"] == (2.61, 2.15)
        assert TUNED_POLICY_GAMMAS["common"] == (0.12, 1.47)

    def test_invalid_bounds_rejected(self):
        with pytest.raises(InputError):
            PolicyParams(
                kappa=np.zeros(2),
                w_min=np.array([0.5, 0.0]),
                w_max=np.array([0.4, 1.0]),
            )


class TestSolvePolicy:
    def test_do_nothing_when_any_trade_costs(self):
        rng = np.random.default_rng(43)
        n = 5
        cov = np.zeros((n, n))
        cov[: n - 1, : n - 1] = _random_spd(rng, n - 1, vol=0.003)
        w_prev = np.full(n, 1.0 / n)
        inp = PolicyInput(
            mu=np.zeros(n), cov=cov, w_prev=w_prev, tau=np.full(n, 1e-3), benchmark=n - 1
        )
        params = default_params(n).with_gammas(0.0, 1.0)
        sol = solve_policy(inp, params)
        assert np.allclose(sol.weights, w_prev, atol=1e-6)

    def test_analytic_two_asset_box_binds(self):
        params = PolicyParams(
            kappa=np.zeros(2),
            w_min=np.array([-0.25, -0.25]),
            w_max=np.array([0.4, 1.0]),
            sigma=0.0045,
            leverage_max=2.0,
            gamma_sc=1.0,
            gamma_tc=1.0,
        )
        inp = PolicyInput(
            mu=np.array([0.001, 0.0]),
            cov=np.array([[1e-4, 0.0], [0.0, 0.0]]),
            w_prev=np.array([0.0, 1.0]),
            tau=np.zeros(2),
            benchmark=1,
        )
        sol = solve_policy(inp, params)
        assert np.allclose(sol.weights, [0.4, 0.6], atol=1e-6)

    def test_unreachable_budget_is_infeasible(self):
        n = 18
        params = PolicyParams(
            kappa=np.zeros(n),
            w_min=np.full(n, -0.25),
            w_max=np.full(n, 0.01),
            gamma_sc=1.0,
            gamma_tc=1.0,
        )
        inp = PolicyInput(
            mu=np.zeros(n),
            cov=np.zeros((n, n)),
            w_prev=np.full(n, 1.0 / n),
            tau=np.zeros(n),
            benchmark=0,
        )
        with pytest.raises(PolicyInfeasibleError):
            solve_policy(inp, params)

    def test_unset_gammas_rejected(self):
        inp, params = _random_instance(np.random.default_rng(44), 4)
        with pytest.raises(InputError):
            solve_policy(inp, PolicyParams(params.kappa, params.w_min, params.w_max))

    def test_constraints_hold_on_random_instances(self):
        rng = np.random.default_rng(45)
        for _ in range(15):
            inp, params = _random_instance(rng, int(rng.integers(3, 8)))
            sol = solve_policy(inp, params)
            w = sol.weights
            assert abs(w.sum() - 1.0) <= 1e-8
            assert w @ inp.cov @ w <= params.sigma**2 * (1 + 1e-6)
            assert np.abs(w).sum() <= params.leverage_max * (1 + 1e-8)
            assert np.all(w >= params.w_min - 1e-8)
            assert np.all(w <= params.w_max + 1e-8)
            assert sol.kkt_residual <= 1e-6

    def test_never_worse_than_holding(self):
        rng = np.random.default_rng(46)
        for _ in range(10):
            n = 5
            inp, params = _random_instance(rng, n)
            # make w_prev feasible: project into the box and rescale
            w_prev = np.clip(inp.w_prev, params.w_min + 0.01, params.w_max - 0.01)
            w_prev = w_prev / w_prev.sum()
            cov = inp.cov * 1e-2  # keep w_prev inside the risk budget
            inp2 = PolicyInput(inp.mu, cov, w_prev, inp.tau, inp.benchmark)
            if w_prev @ cov @ w_prev > params.sigma**2:
                continue
            sol = solve_policy(inp2, params)
            assert sol.objective >= policy_objective(w_prev, inp2, params) - 1e-8

    def test_trading_aversion_monotone_in_gamma_tc(self):
        rng = np.random.default_rng(47)
        for _ in range(5):
            inp, params = _random_instance(rng, 5)
            costs = []
            for gtc in (0.1, 0.5, 1.0, 2.0, 5.0):
                sol = solve_policy(inp, params.with_gammas(1.0, gtc))
                costs.append(float(inp.tau @ np.abs(sol.weights - inp.w_prev)))
            for lo, hi in zip(costs[1:], costs[:-1]):
                assert lo <= hi + 1e-8

    def test_risk_binds_without_costs(self):
        rng = np.random.default_rng(48)
        for _ in range(5):
            n = 5
            mu_r = rng.normal(scale=2e-3, size=n - 1)
            cov_r = _random_spd(rng, n - 1)
            mu, cov = augment_with_benchmark(mu_r, cov_r, n - 1)
            inp = PolicyInput(
                mu=mu,
                cov=cov,
                w_prev=np.concatenate([np.zeros(n - 1), [1.0]]),
                tau=np.zeros(n),
                benchmark=n - 1,
            )
            params = PolicyParams(
                kappa=np.zeros(n),
                w_min=np.full(n, -10.0),
                w_max=np.full(n, 10.0),
                sigma=0.0045,
                leverage_max=50.0,
                gamma_sc=0.0,
                gamma_tc=0.0,
            )
            sol = solve_policy(inp, params)
            risk = sol.weights @ cov @ sol.weights
            assert risk == pytest.approx(params.sigma**2, rel=1e-4)

    def test_matches_reference_solver(self):
        rng = np.random.default_rng(49)
        hits = 0
        for _ in range(20):
            n = int(rng.integers(3, 7))
            inp, params = _random_instance(rng, n)
            sol = solve_policy(inp, params)
            w_ref, obj_ref = solve_reference(
                inp.mu,
                inp.cov,
                inp.w_prev,
                inp.tau,
                params.kappa,
                params.gamma_sc,
                params.gamma_tc,
                params.sigma,
                params.leverage_max,
                params.w_min,
                params.w_max,
            )
            assert sol.objective >= obj_ref - 1e-5
            assert abs(sol.objective - obj_ref) <= 1e-5
            hits += 1
        assert hits == 20

    def test_deterministic(self):
        rng = np.random.default_rng(50)
        inp, params = _random_instance(rng, 6)
        s1 = solve_policy(inp, params)
        s2 = solve_policy(inp, params)
        assert np.array_equal(s1.weights, s2.weights)
        assert s1.objective == s2.objective


class TestPolicyInputValidation:
    def test_nonzero_benchmark_mean_rejected(self):
        cov = np.zeros((2, 2))
        with pytest.raises(InputError):
            PolicyInput(np.array([0.0, 1e-5]), cov, np.array([0.5, 0.5]), np.zeros(2), 1)

    def test_nonzero_benchmark_cov_rejected(self):
        cov = np.full((2, 2), 1e-6)
        with pytest.raises(InputError):
            PolicyInput(np.array([1e-3, 0.0]), cov, np.array([0.5, 0.5]), np.zeros(2), 1)

    def test_budget_violating_w_prev_rejected(self):
        cov = np.zeros((2, 2))
        with pytest.raises(InputError):
            PolicyInput(np.array([0.0, 0.0]), cov, np.array([0.5, 0.6]), np.zeros(2), 1)
