"""Per-day Markowitz-style allocation under shorting and trading costs.

Solves

    maximize    mu' w - gamma_sc kappa' (w)_ - gamma_tc tau' |w - w_prev|
    subject to  w' Sigma w <= sigma^2,   1' w = 1,
                ||w||_1 <= L_max,        w_min <= w <= w_max

with the two nonsmooth cost terms lifted through auxiliary nonnegative
variables and the risk bound as a second-order cone on an eigenvalue
square-root factor of Sigma (eigenvalues clamped at zero, since the
benchmark row/column makes Sigma singular).  The conic program is
compiled once per asset-count with cvxpy parameters and re-solved with
fresh data each day, which keeps repeated solves fast and deterministic.
Solutions are certified by a KKT residual on the original problem.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Mapping

import cvxpy as cp
import numpy as np

from .exceptions import InputError, PolicyInfeasibleError, SolverError

KKT_TOL = 1e-6
_PSD_SLACK = 1e-8


@dataclass
class PolicyParams:
    """Constants of the allocation problem (gammas are the tuned knobs)."""

    kappa: np.ndarray
    w_min: np.ndarray
    w_max: np.ndarray
    sigma: float = 0.0045
    leverage_max: float = 2.0
    gamma_sc: float | None = None
    gamma_tc: float | None = None

    def __post_init__(self) -> None:
        self.kappa = np.asarray(self.kappa, dtype=float)
        self.w_min = np.asarray(self.w_min, dtype=float)
        self.w_max = np.asarray(self.w_max, dtype=float)
        n = self.kappa.shape[0]
        if self.w_min.shape != (n,) or self.w_max.shape != (n,):
            raise InputError("kappa, w_min, w_max must share one length")
        if np.any(self.kappa < 0):
            raise InputError("shorting cost rates must be nonnegative")
        if np.any(self.w_min > self.w_max):
            raise InputError("w_min must not exceed w_max")
        if np.any(self.w_min > 0) or np.any(self.w_max < 0):
            raise InputError("per-asset bounds must straddle zero")
        if self.sigma <= 0:
            raise InputError("risk limit sigma must be positive")
        if self.leverage_max < 1:
            raise InputError("leverage limit must be at least 1")
        for g in (self.gamma_sc, self.gamma_tc):
            if g is not None and g < 0:
                raise InputError("gamma knobs must be nonnegative")

    @property
    def num_assets(self) -> int:
        return self.kappa.shape[0]

    def with_gammas(self, gamma_sc: float, gamma_tc: float) -> "PolicyParams":
        return PolicyParams(
            kappa=self.kappa,
            w_min=self.w_min,
            w_max=self.w_max,
            sigma=self.sigma,
            leverage_max=self.leverage_max,
            gamma_sc=float(gamma_sc),
            gamma_tc=float(gamma_tc),
        )


def default_params(num_assets: int) -> PolicyParams:
    """Fixed study constants: 5 bp shorting rate, 0.45% daily risk limit
    (about 7.1% annualized), leverage 2, box [-0.25, 0.4] on every asset.
    The two gamma knobs are left unset for tuning."""
    n = int(num_assets)
    return PolicyParams(
        kappa=np.full(n, 0.0005),
        w_min=np.full(n, -0.25),
        w_max=np.full(n, 0.4),
        sigma=0.0045,
        leverage_max=2.0,
    )


@dataclass
class PolicyInput:
    """One day's inputs: forecasts, risk, holdings, and trading costs.

    The benchmark asset is included with exactly zero expected active
    return and an exactly zero covariance row/column (it is riskless in
    active terms).
    """

    mu: np.ndarray
    cov: np.ndarray
    w_prev: np.ndarray
    tau: np.ndarray
    benchmark: int

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        self.w_prev = np.asarray(self.w_prev, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        n = self.mu.shape[0]
        if self.cov.shape != (n, n) or self.w_prev.shape != (n,) or self.tau.shape != (n,):
            raise InputError("policy input shapes disagree")
        if not (0 <= self.benchmark < n):
            raise InputError("benchmark index out of range")
        if not np.all(np.isfinite(self.mu)) or not np.all(np.isfinite(self.cov)):
            raise InputError("policy inputs must be finite")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-10:
            raise InputError("covariance must be symmetric")
        scale = max(1.0, float(np.max(np.abs(self.cov))))
        if np.linalg.eigvalsh(self.cov).min() < -_PSD_SLACK * scale:
            raise InputError("covariance must be positive semidefinite")
        b = self.benchmark
        if self.mu[b] != 0.0:
            raise InputError("benchmark expected active return must be exactly zero")
        if np.any(self.cov[b, :] != 0.0) or np.any(self.cov[:, b] != 0.0):
            raise InputError("benchmark covariance row/column must be exactly zero")
        if abs(self.w_prev.sum() - 1.0) > 1e-8:
            raise InputError("previous weights must sum to one")
        if np.any(self.tau < 0) or not np.all(np.isfinite(self.tau)):
            raise InputError("transaction cost rates must be finite and nonnegative")


@dataclass
class PolicySolution:
    weights: np.ndarray
    objective: float
    status: str
    kkt_residual: float
    constraint_residuals: dict[str, float] = field(default_factory=dict)


def augment_with_benchmark(
    mu: np.ndarray, cov: np.ndarray, benchmark: int
) -> tuple[np.ndarray, np.ndarray]:
    """Insert the benchmark's zero mean entry and zero covariance
    row/column at position ``benchmark``."""
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = mu.shape[0]
    if cov.shape != (n, n):
        raise InputError("mu and cov disagree")
    if not (0 <= benchmark <= n):
        raise InputError("benchmark position out of range")
    mu_full = np.insert(mu, benchmark, 0.0)
    cov_full = np.insert(cov, benchmark, 0.0, axis=0)
    cov_full = np.insert(cov_full, benchmark, 0.0, axis=1)
    return mu_full, cov_full


def policy_objective(w: np.ndarray, inp: PolicyInput, params: PolicyParams) -> float:
    """The maximized objective evaluated directly at ``w``."""
    short = np.maximum(-w, 0.0)
    trade = np.abs(w - inp.w_prev)
    return float(
        inp.mu @ w
        - params.gamma_sc * (params.kappa @ short)
        - params.gamma_tc * (inp.tau @ trade)
    )


class _PolicyProgram:
    """One compiled parametric conic program per asset count."""

    def __init__(self, n: int):
        self.n = n
        self.w = cp.Variable(n)
        s = cp.Variable(n)
        q = cp.Variable(n)
        t = cp.Variable(n)
        self.s, self.q, self.t = s, q, t
        self.p_mu = cp.Parameter(n)
        self.p_kap = cp.Parameter(n)  # gamma_sc * kappa
        self.p_tau = cp.Parameter(n)  # gamma_tc * tau
        self.p_wprev = cp.Parameter(n)
        self.p_F = cp.Parameter((n, n))
        self.p_sigma = cp.Parameter(nonneg=True)
        self.p_lev = cp.Parameter(nonneg=True)
        self.p_wmin = cp.Parameter(n)
        self.p_wmax = cp.Parameter(n)
        w = self.w
        self.cons = {
            "short_lift": s + w >= 0,
            "short_nonneg": s >= 0,
            "trade_up": q - (w - self.p_wprev) >= 0,
            "trade_dn": q + (w - self.p_wprev) >= 0,
            "lev_up": t - w >= 0,
            "lev_dn": t + w >= 0,
            "leverage": cp.sum(t) <= self.p_lev,
            "risk": cp.SOC(self.p_sigma, self.p_F @ w),
            "budget": cp.sum(w) == 1,
            "box_lo": w >= self.p_wmin,
            "box_hi": w <= self.p_wmax,
        }
        objective = cp.Maximize(self.p_mu @ w - self.p_kap @ s - self.p_tau @ q)
        self.problem = cp.Problem(objective, list(self.cons.values()))


_local = threading.local()


def _program(n: int) -> _PolicyProgram:
    cache = getattr(_local, "programs", None)
    if cache is None:
        cache = {}
        _local.programs = cache
    if n not in cache:
        cache[n] = _PolicyProgram(n)
    return cache[n]


def _risk_factor(cov: np.ndarray) -> np.ndarray:
    lam, Q = np.linalg.eigh(cov)
    lam = np.clip(lam, 0.0, None)
    return np.sqrt(lam)[:, None] * Q.T


def _kkt_residual(
    w, s, q, t, duals: Mapping[str, np.ndarray], inp: PolicyInput, params: PolicyParams,
    cov_psd: np.ndarray,
) -> float:
    """Max-norm KKT residual of the original problem, scaled by the
    magnitude of the data and multipliers."""
    mu = inp.mu
    kap = params.gamma_sc * params.kappa
    tau = params.gamma_tc * inp.tau
    a1 = duals["short_lift"]
    a2 = duals["short_nonneg"]
    b1 = duals["trade_up"]
    b2 = duals["trade_dn"]
    d1 = duals["lev_up"]
    d2 = duals["lev_dn"]
    lam_lev = float(duals["leverage"])
    nu = float(duals["budget"])
    eta_lo = duals["box_lo"]
    eta_hi = duals["box_hi"]
    soc = np.atleast_1d(np.concatenate([np.atleast_1d(x).ravel() for x in duals["risk"]]))
    y0 = float(soc[0])
    lam_risk = y0 / (2.0 * params.sigma)

    stat_w = (
        -mu
        - a1
        + b1
        - b2
        + d1
        - d2
        + 2.0 * lam_risk * (cov_psd @ w)
        + nu
        - eta_lo
        + eta_hi
    )
    stat_s = kap - a1 - a2
    stat_q = tau - b1 - b2
    stat_t = lam_lev - d1 - d2

    comp = [
        a1 * (s + w),
        a2 * s,
        b1 * (q - (w - inp.w_prev)),
        b2 * (q + (w - inp.w_prev)),
        d1 * (t - w),
        d2 * (t + w),
        np.atleast_1d(lam_lev * (params.leverage_max - t.sum())),
        np.atleast_1d(lam_risk * (params.sigma**2 - w @ cov_psd @ w)),
        eta_lo * (w - params.w_min),
        eta_hi * (params.w_max - w),
    ]
    pieces = [stat_w, stat_s, stat_q, stat_t] + comp
    worst = max(float(np.max(np.abs(p))) for p in pieces)
    scale = 1.0 + max(
        float(np.max(np.abs(mu))),
        float(np.max(kap, initial=0.0)),
        float(np.max(tau, initial=0.0)),
        abs(nu),
        lam_lev,
        float(np.max(np.abs(eta_lo))),
        float(np.max(np.abs(eta_hi))),
        float(np.max(np.abs(a1))),
        float(np.max(np.abs(b1))),
        float(np.max(np.abs(b2))),
        float(np.max(np.abs(d1))),
        abs(2.0 * lam_risk) * float(np.max(np.abs(cov_psd @ w), initial=0.0)),
    )
    return worst / scale


def solve_policy(inp: PolicyInput, params: PolicyParams) -> PolicySolution:
    """Solve the daily allocation problem.

    Raises :class:`PolicyInfeasibleError` when the constraint set is
    empty (the caller decides the fallback) and :class:`SolverError` when
    the solver fails or the solution misses the declared feasibility/KKT
    thresholds.  Pure function of its arguments; deterministic.
    """
    n = inp.mu.shape[0]
    if params.num_assets != n:
        raise InputError("params and input disagree on asset count")
    if params.gamma_sc is None or params.gamma_tc is None:
        raise InputError("gamma_sc and gamma_tc must be set (tune them first)")
    if params.w_max.sum() < 1.0 - 1e-12 or params.w_min.sum() > 1.0 + 1e-12:
        raise PolicyInfeasibleError("budget 1'w = 1 unreachable inside the box")

    prog = _program(n)
    lam, Q = np.linalg.eigh(inp.cov)
    lam = np.clip(lam, 0.0, None)
    F = np.sqrt(lam)[:, None] * Q.T
    cov_psd = Q @ (lam[:, None] * Q.T)

    prog.p_mu.value = inp.mu
    prog.p_kap.value = params.gamma_sc * params.kappa
    prog.p_tau.value = params.gamma_tc * inp.tau
    prog.p_wprev.value = inp.w_prev
    prog.p_F.value = F
    prog.p_sigma.value = params.sigma
    prog.p_lev.value = params.leverage_max
    prog.p_wmin.value = params.w_min
    prog.p_wmax.value = params.w_max

    tight = dict(tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
    try:
        prog.problem.solve(solver=cp.CLARABEL, **tight)
        if prog.problem.status not in (cp.OPTIMAL, cp.INFEASIBLE):
            prog.problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError as exc:
        raise SolverError(f"conic solver failed: {exc}") from exc

    status = prog.problem.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise PolicyInfeasibleError("allocation problem is infeasible")
    if status not in (cp.OPTIMAL,):
        raise SolverError(f"solver returned status {status!r}")

    w = np.asarray(prog.w.value, dtype=float)
    duals = {name: con.dual_value for name, con in prog.cons.items()}
    if any(d is None for d in duals.values()):
        raise SolverError("solver returned no dual certificate")

    kkt = _kkt_residual(
        w,
        np.asarray(prog.s.value),
        np.asarray(prog.q.value),
        np.asarray(prog.t.value),
        duals,
        inp,
        params,
        cov_psd,
    )
    resid = {
        "budget": abs(float(w.sum()) - 1.0),
        "risk": max(0.0, float(w @ cov_psd @ w) - params.sigma**2),
        "leverage": max(0.0, float(np.abs(w).sum()) - params.leverage_max),
        "box": max(
            0.0,
            float(np.max(params.w_min - w, initial=0.0)),
            float(np.max(w - params.w_max, initial=0.0)),
        ),
    }
    if resid["budget"] > 1e-8:
        raise SolverError(f"budget residual {resid['budget']:.2e} exceeds 1e-8")
    if float(w @ cov_psd @ w) > params.sigma**2 * (1.0 + 1e-6):
        raise SolverError("risk constraint violated beyond tolerance")
    if float(np.abs(w).sum()) > params.leverage_max * (1.0 + 1e-8):
        raise SolverError("leverage constraint violated beyond tolerance")
    if resid["box"] > 1e-8:
        raise SolverError("box constraint violated beyond tolerance")
    if kkt > KKT_TOL:
        raise SolverError(f"KKT residual {kkt:.2e} exceeds {KKT_TOL:.0e}")

    return PolicySolution(
        weights=w,
        objective=policy_objective(w, inp, params),
        status=status,
        kkt_residual=kkt,
        constraint_residuals=resid,
    )
