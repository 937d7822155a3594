"""Per-stratum losses and their proximal operators.

Two loss families are supported:

* robust mean: ``sum_t 1'H(mu - y_t)`` with ``H`` the Huber penalty
  applied entrywise, ``H(z) = z^2`` for ``|z| <= M`` and
  ``2M|z| - M^2`` beyond;
* Gaussian precision: ``Tr(S Theta) - logdet(Theta)`` with ``S`` the
  per-stratum second-moment matrix.

The ``_batched`` variants operate on all strata at once and are what the
fitting loop calls; the scalar-stratum wrappers are the public surface.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError, InputError

_HUBER_TOL = 1e-12
_HUBER_MAX_ITER = 200


def huber(z: np.ndarray, half_width: float) -> np.ndarray:
    """Huber penalty, elementwise: quadratic within ``half_width``, linear beyond."""
    if half_width <= 0:
        raise InputError("half_width must be positive")
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    return np.where(a <= half_width, z * z, 2.0 * half_width * a - half_width**2)


def huber_loss(mu: np.ndarray, data: np.ndarray, half_width: float) -> float:
    """Total Huber loss of a mean candidate against a stratum's outcomes."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        return 0.0
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (data.shape[1],):
        raise InputError(f"mean has dimension {mu.shape}, data rows {data.shape[1]}")
    return float(np.sum(huber(mu[None, :] - data, half_width)))


def prox_huber_mean(
    v: np.ndarray, data: np.ndarray, half_width: float, rho: float
) -> np.ndarray:
    """argmin over mu of ``sum_t 1'H(mu - y_t) + (rho/2)||mu - v||^2``.

    The problem separates per entry; each 1-D piece is solved by
    safeguarded Newton on the monotone stationarity condition
    ``sum_t H'(mu - y_t) + rho (mu - v) = 0`` to a residual of ~1e-12.
    With no data the result is ``v`` itself.
    """
    if rho <= 0:
        raise InputError("rho must be positive")
    v = np.asarray(v, dtype=float)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        return v.copy()
    if v.shape != (data.shape[1],):
        raise InputError("dimension mismatch between v and data")
    ids = np.zeros(data.shape[0], dtype=np.int64)
    return _prox_huber_mean_batched(v[None, :], data, ids, 1, half_width, rho)[0]


def _segment_sums(values: np.ndarray, ids: np.ndarray, num_strata: int) -> np.ndarray:
    """Sum (N, n) rows into (K, n) by stratum id.  Fixed summation order."""
    out = np.empty((num_strata, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(ids, weights=values[:, j], minlength=num_strata)
    return out


def _prox_huber_mean_batched(
    v: np.ndarray,
    data: np.ndarray,
    ids: np.ndarray,
    num_strata: int,
    half_width: float,
    rho: float,
    data_min: np.ndarray | None = None,
    data_max: np.ndarray | None = None,
) -> np.ndarray:
    """Huber-mean prox for all strata at once.

    ``v`` is (K, n); ``data`` is the (N, n) pool of outcomes with stratum
    ids in ``ids`` (empty strata simply receive ``v``).  ``data_min`` /
    ``data_max`` are optional precomputed per-stratum extremes.
    """
    if half_width <= 0:
        raise InputError("half_width must be positive")
    M = float(half_width)
    K, n = v.shape
    counts = np.bincount(ids, minlength=num_strata).astype(float)
    has_data = counts > 0

    def g(m: np.ndarray) -> np.ndarray:
        # sum_t H'(m - y_t) per stratum/entry, plus the proximal term
        r = np.clip(m[ids] - data, -M, M)
        return 2.0 * _segment_sums(r, ids, num_strata) + rho * (m - v)

    def slope(m: np.ndarray) -> np.ndarray:
        inside = (np.abs(m[ids] - data) < M).astype(float)
        return 2.0 * _segment_sums(inside, ids, num_strata) + rho

    # The root lies between the data/prox-point extremes in each entry,
    # and within 2*M*n_k/rho of v.
    if data_min is None or data_max is None:
        data_min = np.full((K, n), np.inf)
        data_max = np.full((K, n), -np.inf)
        np.minimum.at(data_min, ids, data)
        np.maximum.at(data_max, ids, data)
    dmin, dmax = data_min, data_max
    spread = 2.0 * M * counts[:, None] / rho
    lo = np.maximum(np.minimum(dmin, v), v - spread)
    hi = np.minimum(np.maximum(dmax, v), v + spread)
    lo = np.where(has_data[:, None], lo, v)
    hi = np.where(has_data[:, None], hi, v)

    m = 0.5 * (lo + hi)
    tol = _HUBER_TOL * (1.0 + 2.0 * M * counts[:, None] + rho * (1.0 + np.abs(v)))
    for _ in range(_HUBER_MAX_ITER):
        gm = g(m)
        if np.all(np.abs(gm) <= tol):
            break
        lo = np.where(gm < 0, m, lo)
        hi = np.where(gm > 0, m, hi)
        step = gm / slope(m)
        cand = m - step
        outside = (cand <= lo) | (cand >= hi)
        m = np.where(outside, 0.5 * (lo + hi), cand)
    return np.where(has_data[:, None], m, v)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _chol_logdet(theta: np.ndarray) -> float:
    try:
        c = np.linalg.cholesky(theta)
    except np.linalg.LinAlgError as exc:
        raise DomainError("matrix is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diagonal(c))))


def logdet_loss(theta: np.ndarray, second_moment: np.ndarray) -> float:
    """Gaussian loss ``Tr(S Theta) - logdet(Theta)`` for one stratum.

    Raises :class:`DomainError` when ``theta`` is not positive definite.
    """
    theta = np.asarray(theta, dtype=float)
    S = np.asarray(second_moment, dtype=float)
    if theta.shape != S.shape or theta.ndim != 2:
        raise InputError("theta and second moment must be square matrices of equal size")
    return float(np.trace(S @ theta)) - _chol_logdet(theta)


def prox_logdet_precision(
    v: np.ndarray,
    second_moment: np.ndarray,
    rho: float,
    include_loss: bool = True,
) -> np.ndarray:
    """argmin over Theta of ``Tr(S Theta) - logdet Theta + (rho/2)||Theta - V||_F^2``.

    Solved in closed form: with ``rho V - S = Q diag(lam) Q'``, the
    minimizer is ``Q diag((lam + sqrt(lam^2 + 4 rho)) / (2 rho)) Q'``,
    which is symmetric positive definite for any symmetric ``V``.  With
    ``include_loss=False`` (an empty stratum whose loss is dropped) the
    prox is the identity map, i.e. the symmetrized ``V``.
    """
    if rho <= 0:
        raise InputError("rho must be positive")
    v = _sym(np.asarray(v, dtype=float))
    if not include_loss:
        return v
    S = np.asarray(second_moment, dtype=float)
    if S.shape != v.shape:
        raise InputError("second moment shape mismatch")
    return _prox_logdet_batched(v[None], S[None], rho, np.array([True]))[0]


def _prox_logdet_batched(
    v: np.ndarray, second_moments: np.ndarray, rho: float, include: np.ndarray
) -> np.ndarray:
    """Batched log-det prox over stacked (K, n, n) inputs."""
    v = _sym(v)
    out = v.copy()
    if np.any(include):
        A = _sym(rho * v[include] - second_moments[include])
        lam, Q = np.linalg.eigh(A)
        phi = (lam + np.sqrt(lam * lam + 4.0 * rho)) / (2.0 * rho)
        out[include] = _sym(np.einsum("kij,kj,klj->kil", Q, phi, Q))
    return out
