"""Independent reference implementations used as test oracles.

Everything here is written from the problem definitions directly (dense
matrices, explicit double sums, bisection root-finding, long-run
first-order minimization) and deliberately avoids the package's solver
code paths.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# quantiles


def quantile_sorted(values, q):
    """Linear-interpolation quantile computed by explicit sorting."""
    xs = np.sort(np.asarray(values, dtype=float))
    pos = q * (len(xs) - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return xs[lo] * (1 - frac) + xs[hi] * frac


# ---------------------------------------------------------------------------
# Huber pieces


def huber_val(z, half_width):
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    return np.where(a <= half_width, z * z, 2 * half_width * a - half_width**2)


def huber_grad(z, half_width):
    return 2.0 * np.clip(z, -half_width, half_width)


def huber_prox_bisect(y, v, half_width, rho, iters=200):
    """1-D prox root by pure bisection on the monotone stationarity map."""
    y = np.asarray(y, dtype=float)

    def g(m):
        return np.sum(huber_grad(m - y, half_width)) + rho * (m - v)

    lo = min(y.min(initial=v), v) - 1.0
    hi = max(y.max(initial=v), v) + 1.0
    while g(lo) > 0:
        lo -= 1.0
    while g(hi) < 0:
        hi += 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def pooled_huber_estimate(Y, half_width, ridge=0.0, iters=200):
    """Coordinatewise minimizer of sum_t H(m - y_t) + ridge * m^2."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    out = np.zeros(Y.shape[1])
    for j in range(Y.shape[1]):
        y = Y[:, j]

        def g(m):
            return np.sum(huber_grad(m - y, half_width)) + 2.0 * ridge * m

        lo, hi = y.min() - 1.0, y.max() + 1.0
        while g(lo) > 0:
            lo -= 1.0
        while g(hi) < 0:
            hi += 1.0
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if g(mid) > 0:
                hi = mid
            else:
                lo = mid
        out[j] = 0.5 * (lo + hi)
    return out


# ---------------------------------------------------------------------------
# dense objective evaluation (term-by-term, straight from the definition)


def dense_weight_matrix(num_nodes, edges, edge_axes, group_gammas):
    W = np.zeros((num_nodes, num_nodes))
    for (u, v), a in zip(edges, edge_axes):
        W[u, v] = W[v, u] = group_gammas[a]
    return W


def coupling_penalty(W, theta):
    """(1/2) sum_{ij} W_ij ||theta_i - theta_j||^2 by explicit double sum."""
    K = W.shape[0]
    total = 0.0
    flat = np.asarray(theta, dtype=float).reshape(K, -1)
    for i in range(K):
        for j in range(K):
            if W[i, j] != 0.0:
                d = flat[i] - flat[j]
                total += 0.5 * W[i, j] * float(d @ d)
    return total


def mean_objective(theta, strata, W, local_gamma, half_width):
    loss = 0.0
    for k, Yk in enumerate(strata):
        if len(Yk):
            loss += float(np.sum(huber_val(theta[k][None, :] - Yk, half_width)))
    ridge = local_gamma * float(np.sum(np.asarray(theta) ** 2))
    return loss + ridge + coupling_penalty(W, theta)


def precision_objective(theta, second_moments, counts, W, drop_empty=True):
    loss = 0.0
    for k in range(len(counts)):
        if counts[k] == 0 and drop_empty:
            continue
        sign, logdet = np.linalg.slogdet(theta[k])
        if sign <= 0:
            return np.inf
        loss += float(np.trace(second_moments[k] @ theta[k])) - logdet
    return loss + coupling_penalty(W, theta)


# ---------------------------------------------------------------------------
# long-run first-order reference fits


def reference_mean_fit(strata, W, local_gamma, half_width, iters=60000):
    """FISTA with a conservative fixed step on the smooth mean objective."""
    K = W.shape[0]
    n = next(Yk.shape[1] for Yk in strata if len(Yk))
    counts = np.array([len(Yk) for Yk in strata], dtype=float)
    Lgraph = np.diag(W.sum(axis=1)) - W
    lip = 2.0 * counts.max() + 2.0 * local_gamma + 2.0 * np.linalg.eigvalsh(Lgraph).max()

    def grad(th):
        g = np.zeros_like(th)
        for k, Yk in enumerate(strata):
            if len(Yk):
                g[k] = np.sum(huber_grad(th[k][None, :] - Yk, half_width), axis=0)
        return g + 2.0 * local_gamma * th + 2.0 * Lgraph @ th

    x = np.zeros((K, n))
    y = x.copy()
    t = 1.0
    for _ in range(iters):
        xn = y - grad(y) / lip
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = xn + (t - 1.0) / tn * (xn - x)
        if np.max(np.abs(xn - x)) < 1e-15:
            x = xn
            break
        x, t = xn, tn
    return x


def reference_precision_fit(second_moments, counts, W, drop_empty=True, iters=50000):
    """Barzilai-Borwein gradient descent with backtracking kept inside the
    positive definite cone (for strata whose loss includes the barrier)."""
    K, n, _ = np.asarray(second_moments).shape
    S = np.asarray(second_moments, dtype=float)
    counts = np.asarray(counts)
    include = counts > 0 if drop_empty else np.ones(K, dtype=bool)
    Lgraph = np.diag(W.sum(axis=1)) - W

    def is_ok(th):
        for k in range(K):
            if include[k]:
                try:
                    np.linalg.cholesky(th[k])
                except np.linalg.LinAlgError:
                    return False
        return True

    def obj(th):
        return precision_objective(th, S, counts * include, W, drop_empty=True)

    def grad(th):
        g = 2.0 * np.einsum("ij,jkl->ikl", Lgraph, th)
        for k in range(K):
            if include[k]:
                g[k] += S[k] - np.linalg.inv(th[k])
        return g

    th = np.broadcast_to(np.eye(n), (K, n, n)).copy()
    f = obj(th)
    th_prev = None
    g_prev = None
    for _ in range(iters):
        g = grad(th)
        gnorm = np.linalg.norm(g.ravel())
        if gnorm < 1e-12:
            break
        if th_prev is None:
            step = 0.01
        else:
            dth = (th - th_prev).ravel()
            dg = (g - g_prev).ravel()
            denom = float(dth @ dg)
            step = abs(float(dth @ dth) / denom) if denom != 0 else 0.01
        cand = None
        while step > 1e-18:
            trial = th - step * g
            trial = 0.5 * (trial + np.swapaxes(trial, 1, 2))
            if is_ok(trial):
                fc = obj(trial)
                if np.isfinite(fc):
                    cand = (trial, fc)
                    break
            step /= 2.0
        if cand is None:
            break
        th_prev, g_prev = th, g
        th, f = cand
    return th


# ---------------------------------------------------------------------------
# misc metric oracles


def pearson_two_pass(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm = x - x.mean()
    ym = y - y.mean()
    return float(np.sum(xm * ym) / np.sqrt(np.sum(xm * xm) * np.sum(ym * ym)))


def drawdown_cummax(values):
    v = np.asarray(values, dtype=float)
    peak = -np.inf
    worst = 0.0
    for x in v:
        peak = max(peak, x)
        worst = max(worst, 1.0 - x / peak)
    return worst


def ols_normal_equations(X, y):
    A = np.column_stack([np.ones(len(X)), X])
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    return coef  # [intercept, betas...]
