"""Independent reference solver for the daily allocation problem.

Lifts the nonsmooth terms with auxiliary variables and hands the smooth
nonlinear program to scipy's SLSQP — a completely separate code path
from the package's conic solver.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize


def solve_reference(mu, cov, w_prev, tau, kappa, gamma_sc, gamma_tc, sigma,
                    lev_max, w_min, w_max):
    """Returns (w, objective) maximizing the allocation objective."""
    n = len(mu)
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(cov, dtype=float)

    # variables x = [w, s, q, t]
    def unpack(x):
        return x[:n], x[n : 2 * n], x[2 * n : 3 * n], x[3 * n :]

    def neg_obj(x):
        w, s, q, _ = unpack(x)
        return -(mu @ w - gamma_sc * (kappa @ s) - gamma_tc * (tau @ q))

    def neg_obj_grad(x):
        g = np.zeros(4 * n)
        g[:n] = -mu
        g[n : 2 * n] = gamma_sc * kappa
        g[2 * n : 3 * n] = gamma_tc * tau
        return g

    cons = [
        {"type": "eq", "fun": lambda x: np.sum(x[:n]) - 1.0,
         "jac": lambda x: np.concatenate([np.ones(n), np.zeros(3 * n)])},
        {"type": "ineq", "fun": lambda x: sigma**2 - unpack(x)[0] @ cov @ unpack(x)[0],
         "jac": lambda x: np.concatenate([-2 * cov @ unpack(x)[0], np.zeros(3 * n)])},
        {"type": "ineq", "fun": lambda x: lev_max - np.sum(unpack(x)[3]),
         "jac": lambda x: np.concatenate([np.zeros(3 * n), -np.ones(n)])},
        # s >= -w, q >= +-(w - w_prev), t >= +-w
        {"type": "ineq", "fun": lambda x: unpack(x)[1] + unpack(x)[0]},
        {"type": "ineq", "fun": lambda x: unpack(x)[2] - (unpack(x)[0] - w_prev)},
        {"type": "ineq", "fun": lambda x: unpack(x)[2] + (unpack(x)[0] - w_prev)},
        {"type": "ineq", "fun": lambda x: unpack(x)[3] - unpack(x)[0]},
        {"type": "ineq", "fun": lambda x: unpack(x)[3] + unpack(x)[0]},
    ]
    bounds = (
        [(w_min[i], w_max[i]) for i in range(n)]
        + [(0.0, None)] * n
        + [(0.0, None)] * n
        + [(None, None)] * n
    )
    w0 = np.clip(w_prev, w_min, w_max)
    w0 = w0 + (1.0 - w0.sum()) / n
    w0 = np.clip(w0, w_min, w_max)
    x0 = np.concatenate([w0, np.maximum(-w0, 0), np.abs(w0 - w_prev), np.abs(w0)])
    best = None
    for start in (x0, np.concatenate([np.full(n, 1.0 / n)] + [np.full(n, 1.0 / n)] * 3)):
        res = minimize(
            neg_obj,
            start,
            jac=neg_obj_grad,
            bounds=bounds,
            constraints=cons,
            method="SLSQP",
            options={"maxiter": 2000, "ftol": 1e-14},
        )
        if res.success:
            w = res.x[:n]
            obj = mu @ w - gamma_sc * (kappa @ np.maximum(-w, 0)) - gamma_tc * (
                tau @ np.abs(w - w_prev)
            )
            if best is None or obj > best[1]:
                best = (w, float(obj))
    if best is None:
        raise RuntimeError("reference solver failed")
    return best
