"""Daily policy simulation with shorting and transaction costs.

The simulator starts from an all-benchmark portfolio with value 1.  Each
trading day it asks the policy for new weights using that day's market
condition, the previous weights, and the *trailing* half-spread (known at
the open), then realizes the net return with the *actual* half-spread of
the day (not known at the open):

    r_net = r'w - kappa'(w)_- - tau_sim'|w - w_prev|,   v <- v (1 + r_net)

The first panel day only seeds the spread history; trading starts on the
second day.  Costs enter the portfolio return directly (dividend
reinvestment assumed, no separate cash account).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from .exceptions import (
    InputError,
    PolicyInfeasibleError,
    RegressionError,
    SpreadHistoryError,
    UndefinedMetricError,
)
from .models import MeanModel, PrecisionModel
from .policy import PolicyInput, PolicyParams, augment_with_benchmark, solve_policy

TRADING_DAYS_PER_YEAR = 250
FACTOR_NAMES = ("MKTRF", "SMB", "HML", "UMD")


def trailing_half_spread(
    spreads: pd.DataFrame, day: int, window: int = 15
) -> np.ndarray:
    """Per-asset half of the mean spread over up to ``window`` prior days.

    ``day`` is the row position; the day's own spread is excluded.  With
    fewer than ``window`` prior days the mean runs over what exists.
    """
    if day <= 0 or day >= len(spreads):
        raise SpreadHistoryError("no prior spread days available")
    lo = max(0, day - window)
    return 0.5 * spreads.iloc[lo:day].mean().to_numpy()


def accounting_step(
    w: np.ndarray,
    w_prev: np.ndarray,
    r: np.ndarray,
    kappa: np.ndarray,
    tau_sim: np.ndarray,
) -> tuple[float, float, float, float]:
    """One day of backtest accounting: (gross, shorting, trading, net)."""
    gross = float(r @ w)
    short_cost = float(kappa @ np.maximum(-w, 0.0))
    trade_cost = float(tau_sim @ np.abs(w - w_prev))
    return gross, short_cost, trade_cost, gross - short_cost - trade_cost


@dataclass
class BacktestResult:
    """Per-day ledger of one simulation plus run metadata."""

    dates: pd.DatetimeIndex
    conditions: np.ndarray
    weights: np.ndarray  # (T, n) post-trade weights
    gross: np.ndarray
    shorting_cost: np.ndarray
    trading_cost: np.ndarray
    net: np.ndarray
    value: np.ndarray
    infeasible: np.ndarray  # bool flags: policy failed, held previous weights
    assets: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def ledger(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "condition": self.conditions,
                "gross": self.gross,
                "shorting_cost": self.shorting_cost,
                "trading_cost": self.trading_cost,
                "net": self.net,
                "value": self.value,
                "infeasible": self.infeasible.astype(int),
            },
            index=self.dates,
        )
        for j, a in enumerate(self.assets):
            frame[f"w_{a}"] = self.weights[:, j]
        return frame


def run_backtest(
    returns: pd.DataFrame,
    spreads: pd.DataFrame,
    conditions: pd.Series,
    mean_model: MeanModel,
    precision_model: PrecisionModel,
    params: PolicyParams,
    benchmark: str,
    window: int = 15,
    label: str = "stratified",
    trade_start=None,
) -> BacktestResult:
    """Simulate the policy day by day over aligned panels.

    ``returns`` are active returns including the benchmark column
    (identically zero); models cover the non-benchmark columns in panel
    order.  Rows before ``trade_start`` (default: everything before the
    second row) only seed the trailing-spread history.  On an infeasible
    day the previous weights are held and the day is flagged.
    """
    if not (returns.index.equals(spreads.index) and returns.index.equals(conditions.index)):
        raise InputError("returns, spreads, and conditions must share one date index")
    if list(returns.columns) != list(spreads.columns):
        raise InputError("returns and spreads must share one column order")
    if benchmark not in returns.columns:
        raise InputError(f"benchmark column {benchmark!r} missing")
    if len(returns) < 2:
        raise InputError("need at least two days (one seeds the spread history)")
    model_assets = tuple(c for c in returns.columns if c != benchmark)
    if tuple(mean_model.assets) != model_assets or tuple(precision_model.assets) != model_assets:
        raise InputError("model asset order disagrees with the panels")

    bench_pos = list(returns.columns).index(benchmark)
    n_full = returns.shape[1]
    # fixed memory layout so reductions are bit-reproducible regardless of
    # how the caller's frames were assembled
    R = np.ascontiguousarray(returns.to_numpy(dtype=float))
    Sp = np.ascontiguousarray(spreads.to_numpy(dtype=float))
    z = conditions.to_numpy(dtype=np.int64)

    # per-condition policy inputs are condition-invariant: cache them
    aug_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def model_inputs(k: int) -> tuple[np.ndarray, np.ndarray]:
        if k not in aug_cache:
            mu_full, cov_full = augment_with_benchmark(
                mean_model.forecast(k), precision_model.covariance(k), bench_pos
            )
            aug_cache[k] = (mu_full, cov_full)
        return aug_cache[k]

    w_prev = np.zeros(n_full)
    w_prev[bench_pos] = 1.0
    v = 1.0

    if trade_start is None:
        first = 1  # day 0 seeds the spread history
    else:
        first = int(returns.index.searchsorted(pd.Timestamp(trade_start)))
        if first == 0:
            first = 1
        if first >= len(returns):
            raise InputError("trade_start is past the end of the panels")
    days = range(first, len(returns))
    T = len(returns) - first
    weights = np.empty((T, n_full))
    gross = np.empty(T)
    short_c = np.empty(T)
    trade_c = np.empty(T)
    net = np.empty(T)
    value = np.empty(T)
    flags = np.zeros(T, dtype=bool)

    for i, t in enumerate(days):
        mu_full, cov_full = model_inputs(int(z[t]))
        tau_t = 0.5 * Sp[max(0, t - window) : t].mean(axis=0)
        try:
            sol = solve_policy(
                PolicyInput(
                    mu=mu_full,
                    cov=cov_full,
                    w_prev=w_prev,
                    tau=tau_t,
                    benchmark=bench_pos,
                ),
                params,
            )
            w = sol.weights
        except PolicyInfeasibleError:
            w = w_prev.copy()
            flags[i] = True
        tau_sim = 0.5 * Sp[t]
        g, sc, tc, nr = accounting_step(w, w_prev, R[t], params.kappa, tau_sim)
        v = v * (1.0 + nr)
        weights[i] = w
        gross[i], short_c[i], trade_c[i], net[i] = g, sc, tc, nr
        value[i] = v
        w_prev = w

    return BacktestResult(
        dates=returns.index[first:],
        conditions=z[first:],
        weights=weights,
        gross=gross,
        shorting_cost=short_c,
        trading_cost=trade_c,
        net=net,
        value=value,
        infeasible=flags,
        assets=tuple(returns.columns),
        meta={
            "policy": label,
            "benchmark": benchmark,
            "gamma_sc": params.gamma_sc,
            "gamma_tc": params.gamma_tc,
            "sigma": params.sigma,
            "leverage_max": params.leverage_max,
            "window": window,
            "start": str(returns.index[first].date()),
            "end": str(returns.index[-1].date()),
        },
    )


@dataclass
class PerformanceReport:
    annualized_return: float
    annualized_risk: float
    sharpe: float
    max_drawdown: float
    days: int

    def to_dict(self) -> dict:
        return {
            "annualized_return": self.annualized_return,
            "annualized_risk": self.annualized_risk,
            "sharpe": self.sharpe,
            "max_drawdown": self.max_drawdown,
            "days": self.days,
        }


def annualized_return(net: np.ndarray) -> float:
    """Geometric annualization on a 250-day year."""
    net = np.asarray(net, dtype=float)
    growth = float(np.prod(1.0 + net))
    if growth <= 0:
        return -1.0
    return growth ** (TRADING_DAYS_PER_YEAR / len(net)) - 1.0


def performance_metrics(result: BacktestResult) -> PerformanceReport:
    """Annualized return/risk, their ratio, and maximum drawdown."""
    net = result.net
    if len(net) < 2:
        raise InputError("need at least two days of returns")
    ann_ret = annualized_return(net)
    ann_risk = float(np.sqrt(TRADING_DAYS_PER_YEAR) * np.std(net, ddof=1))
    if ann_risk == 0.0:
        raise UndefinedMetricError("zero risk: Sharpe ratio undefined")
    path = np.concatenate([[1.0], result.value])
    peaks = np.maximum.accumulate(path)
    max_dd = float(np.max(1.0 - path / peaks))
    return PerformanceReport(
        annualized_return=ann_ret,
        annualized_risk=ann_risk,
        sharpe=ann_ret / ann_risk,
        max_drawdown=max_dd,
        days=len(net),
    )


@dataclass
class FactorRegression:
    coefficients: dict[str, float]
    alpha_daily: float
    alpha_annualized: float
    observations: int


def factor_regression(net: pd.Series, factors: pd.DataFrame) -> FactorRegression:
    """OLS of daily net returns on the four factor columns plus intercept."""
    missing = [c for c in FACTOR_NAMES if c not in factors.columns]
    if missing:
        raise InputError(f"factor columns missing: {missing}")
    joined = pd.concat([net.rename("net"), factors[list(FACTOR_NAMES)]], axis=1, join="inner")
    joined = joined.dropna()
    if len(joined) < 6:
        raise InputError("need at least six aligned observations")
    X = joined[list(FACTOR_NAMES)].to_numpy()
    y = joined["net"].to_numpy()
    A = np.column_stack([np.ones(len(X)), X])
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise RegressionError("rank-deficient factor design")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    alpha = float(coef[0])
    return FactorRegression(
        coefficients={name: float(c) for name, c in zip(FACTOR_NAMES, coef[1:])},
        alpha_daily=alpha,
        alpha_annualized=TRADING_DAYS_PER_YEAR * alpha,
        observations=len(joined),
    )
