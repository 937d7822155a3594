"""Return and risk model wrappers, validation metrics, and summary tables.

A :class:`MeanModel` holds one active-return forecast vector per market
condition; a :class:`PrecisionModel` holds one inverse covariance per
condition.  Both can also represent the condition-independent pooled
baselines (the "common" models) as constant tables, so downstream code
never branches on the model kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import InputError, UndefinedMetricError
from .fitting import (
    HUBER_MEAN,
    LOGDET_PRECISION,
    FitConfig,
    FitResult,
    StratumDataset,
    fit,
)
from .grid import RegularizationGraph


@dataclass(eq=False)
class MeanModel:
    """Per-condition active-return forecasts, one row per stratum.

    ``mu`` is (K, n) in daily-return fraction units.  ``meta`` carries
    provenance (hyper-parameters, fit diagnostics, bins/graph identity).
    """

    mu: np.ndarray
    assets: tuple[str, ...]
    meta: dict = field(default_factory=dict)
    fit_result: FitResult | None = None

    def __post_init__(self) -> None:
        self.mu = np.ascontiguousarray(np.asarray(self.mu, dtype=float))
        self.assets = tuple(self.assets)
        if self.mu.ndim != 2:
            raise InputError("mu must be (K, n)")
        if self.mu.shape[1] != len(self.assets):
            raise InputError("one asset name per column required")
        if not np.all(np.isfinite(self.mu)):
            raise InputError("forecasts must be finite")

    @property
    def num_strata(self) -> int:
        return self.mu.shape[0]

    def forecast(self, condition: int) -> np.ndarray:
        """Forecast vector for a 1-based flat condition code."""
        return self.mu[condition - 1]

    @classmethod
    def constant(cls, mu: np.ndarray, num_strata: int, assets: Sequence[str], **meta) -> "MeanModel":
        table = np.tile(np.asarray(mu, dtype=float), (num_strata, 1))
        return cls(table, tuple(assets), dict(meta, kind="common"))


@dataclass(eq=False)
class PrecisionModel:
    """Per-condition inverse covariances; derived covariances are cached."""

    theta: np.ndarray  # (K, n, n)
    assets: tuple[str, ...]
    meta: dict = field(default_factory=dict)
    fit_result: FitResult | None = None

    def __post_init__(self) -> None:
        self.theta = np.ascontiguousarray(np.asarray(self.theta, dtype=float))
        self.assets = tuple(self.assets)
        if self.theta.ndim != 3 or self.theta.shape[1] != self.theta.shape[2]:
            raise InputError("theta must be (K, n, n)")
        if self.theta.shape[1] != len(self.assets):
            raise InputError("one asset name per matrix row required")
        sym_gap = np.max(np.abs(self.theta - np.swapaxes(self.theta, 1, 2)), initial=0.0)
        if sym_gap > 1e-8:
            raise InputError("precision blocks must be symmetric")
        self._cov_cache: dict[int, np.ndarray] = {}

    @property
    def num_strata(self) -> int:
        return self.theta.shape[0]

    def precision(self, condition: int) -> np.ndarray:
        return self.theta[condition - 1]

    def covariance(self, condition: int) -> np.ndarray:
        k = int(condition)
        if k not in self._cov_cache:
            cov = np.linalg.inv(self.theta[k - 1])
            self._cov_cache[k] = 0.5 * (cov + cov.T)
        return self._cov_cache[k]

    @classmethod
    def constant(
        cls, theta: np.ndarray, num_strata: int, assets: Sequence[str], **meta
    ) -> "PrecisionModel":
        table = np.tile(np.asarray(theta, dtype=float), (num_strata, 1, 1))
        return cls(table, tuple(assets), dict(meta, kind="common"))


def fit_return_model(
    train: StratumDataset,
    graph: RegularizationGraph,
    local_gamma: float,
    edge_gammas: Mapping[str, float],
    half_width: float = 0.01,
    assets: Sequence[str] | None = None,
    **solver_kwargs,
) -> MeanModel:
    """Fit the stratified return model (Huber loss, squared-norm local ridge)."""
    config = FitConfig(
        laplacian_gammas=dict(edge_gammas),
        local_gamma=float(local_gamma),
        huber_halfwidth=float(half_width),
        **solver_kwargs,
    )
    result = fit(train, graph, config, HUBER_MEAN)
    names = tuple(assets) if assets is not None else tuple(f"A{j}" for j in range(train.dim))
    meta = {
        "kind": "stratified",
        "local_gamma": float(local_gamma),
        "edge_gammas": dict(edge_gammas),
        "half_width": float(half_width),
        "converged": result.converged,
        "iterations": result.iterations,
        "objective": result.objective,
    }
    return MeanModel(result.theta, names, meta, fit_result=result)


def fit_risk_model(
    train: StratumDataset,
    graph: RegularizationGraph,
    edge_gammas: Mapping[str, float],
    assets: Sequence[str] | None = None,
    empty_stratum: str = "drop",
    **solver_kwargs,
) -> PrecisionModel:
    """Fit the stratified risk model (log-det loss, no local regularization).

    Outcomes are treated as zero mean; the per-stratum statistic is the
    second moment ``S_k = (1/n_k) sum y y'``.  Unless the caller supplies
    ``rho``, the splitting penalty defaults to a tenth of the average
    per-asset variance — precisions live near 1/variance, and a penalty
    matched to that scale converges an order of magnitude faster than a
    unit one.
    """
    if "rho" not in solver_kwargs:
        S = train.second_moments()
        counts = train.counts
        if np.any(counts > 0):
            scale = float(
                np.mean([np.trace(S[k]) / train.dim for k in range(train.num_strata) if counts[k] > 0])
            )
            solver_kwargs["rho"] = max(0.1 * scale, 1e-12)
    config = FitConfig(
        laplacian_gammas=dict(edge_gammas),
        local_gamma=0.0,
        empty_stratum=empty_stratum,
        **solver_kwargs,
    )
    result = fit(train, graph, config, LOGDET_PRECISION)
    names = tuple(assets) if assets is not None else tuple(f"A{j}" for j in range(train.dim))
    meta = {
        "kind": "stratified",
        "edge_gammas": dict(edge_gammas),
        "empty_stratum": empty_stratum,
        "converged": result.converged,
        "iterations": result.iterations,
        "objective": result.objective,
    }
    return PrecisionModel(result.theta, names, meta, fit_result=result)


def common_mean(train: StratumDataset) -> np.ndarray:
    """Pooled baseline forecast: the empirical mean over all training rows."""
    if train.total == 0:
        raise InputError("no training data")
    return train.outcomes.mean(axis=0)


def common_precision(train: StratumDataset) -> np.ndarray:
    """Pooled baseline precision: inverse of the pooled second moment."""
    if train.total == 0:
        raise InputError("no training data")
    Y = train.outcomes
    S = (Y.T @ Y) / Y.shape[0]
    theta = np.linalg.inv(S)
    return 0.5 * (theta + theta.T)


def validation_correlation(model: MeanModel, conditions, outcomes) -> float:
    """Pearson correlation between forecasts and realizations, pooled over
    every (record, asset) pair."""
    z = np.asarray(conditions, dtype=np.int64)
    Y = np.asarray(outcomes, dtype=float)
    if z.ndim != 1 or Y.ndim != 2 or z.shape[0] != Y.shape[0]:
        raise InputError("conditions and outcomes must align row-wise")
    if Y.shape[0] < 2:
        raise UndefinedMetricError("need at least two records")
    preds = model.mu[z - 1].ravel()
    real = Y.ravel()
    if np.std(preds) == 0.0 or np.std(real) == 0.0:
        raise UndefinedMetricError("zero variance in predictions or realizations")
    return float(np.corrcoef(preds, real)[0, 1])


def validation_nll(model: PrecisionModel, conditions, outcomes) -> float:
    """Average Gaussian loss ``(1/N) sum_t [y' theta_z y - logdet theta_z]``
    (scaled, constant terms dropped)."""
    z = np.asarray(conditions, dtype=np.int64)
    Y = np.asarray(outcomes, dtype=float)
    if z.ndim != 1 or Y.ndim != 2 or z.shape[0] != Y.shape[0]:
        raise InputError("conditions and outcomes must align row-wise")
    if Y.shape[0] < 1:
        raise InputError("need at least one record")
    logdets: dict[int, float] = {}
    for k in np.unique(z):
        sign, val = np.linalg.slogdet(model.theta[k - 1])
        if sign <= 0:
            raise InputError(f"stratum {k}: precision block not positive definite")
        logdets[int(k)] = float(val)
    quad = np.einsum("ti,tij,tj->t", Y, model.theta[z - 1], Y)
    ld = np.array([logdets[int(k)] for k in z])
    return float(np.mean(quad - ld))


def mean_summary(model: MeanModel, common: np.ndarray) -> pd.DataFrame:
    """Per-asset forecast statistics over all conditions, in percent daily
    return: pooled baseline, then median/min/max of the stratified model."""
    mu_pct = 100.0 * model.mu
    return pd.DataFrame(
        {
            "common": 100.0 * np.asarray(common, dtype=float),
            "median": np.median(mu_pct, axis=0),
            "min": mu_pct.min(axis=0),
            "max": mu_pct.max(axis=0),
        },
        index=list(model.assets),
    )


def _covariances(model: PrecisionModel) -> np.ndarray:
    covs = np.linalg.inv(model.theta)
    return 0.5 * (covs + np.swapaxes(covs, 1, 2))


def volatility_summary(model: PrecisionModel, common_theta: np.ndarray) -> pd.DataFrame:
    """Per-asset volatility forecasts in percent daily return."""
    covs = _covariances(model)
    vols = 100.0 * np.sqrt(np.diagonal(covs, axis1=1, axis2=2))
    common_cov = np.linalg.inv(np.asarray(common_theta, dtype=float))
    return pd.DataFrame(
        {
            "common": 100.0 * np.sqrt(np.diag(common_cov)),
            "median": np.median(vols, axis=0),
            "min": vols.min(axis=0),
            "max": vols.max(axis=0),
        },
        index=list(model.assets),
    )


def correlation_summary(
    model: PrecisionModel, common_theta: np.ndarray, reference_asset: str = "AGG"
) -> pd.DataFrame:
    """Per-asset correlation with a reference asset across conditions."""
    if reference_asset not in model.assets:
        raise InputError(f"reference asset {reference_asset!r} not in model")
    r = model.assets.index(reference_asset)
    covs = _covariances(model)
    sd = np.sqrt(np.diagonal(covs, axis1=1, axis2=2))
    corr = covs[:, :, r] / (sd * sd[:, [r]])
    common_cov = np.linalg.inv(np.asarray(common_theta, dtype=float))
    csd = np.sqrt(np.diag(common_cov))
    return pd.DataFrame(
        {
            "common": common_cov[:, r] / (csd * csd[r]),
            "median": np.median(corr, axis=0),
            "min": corr.min(axis=0),
            "max": corr.max(axis=0),
        },
        index=list(model.assets),
    )


# ---------------------------------------------------------------------------
# model files: a JSON header line, then one whitespace-separated row of
# parameters per stratum (mean: n entries; precision: n(n+1)/2 packed
# upper-triangular entries, row-major).  Floats are written with repr so
# files round-trip bit-exactly and are byte-stable across runs.


def _fmt_row(vals) -> str:
    return " ".join(repr(float(v)) for v in vals)


def save_model(model: MeanModel | PrecisionModel, path) -> None:
    if isinstance(model, MeanModel):
        kind, K, n = "mean", model.num_strata, len(model.assets)
        rows = model.mu
        pack = lambda row: row
    else:
        kind, K, n = "precision", model.num_strata, len(model.assets)
        iu = np.triu_indices(n)
        rows = model.theta
        pack = lambda block: block[iu]
    header = {
        "kind": kind,
        "num_strata": K,
        "dim": n,
        "assets": list(model.assets),
        "meta": _jsonable(model.meta),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for k in range(K):
            fh.write(_fmt_row(pack(rows[k])) + "\n")


def load_model(path) -> MeanModel | PrecisionModel:
    with open(path) as fh:
        header = json.loads(fh.readline())
        rows = [np.array([float(x) for x in line.split()]) for line in fh if line.strip()]
    K, n = header["num_strata"], header["dim"]
    assets = tuple(header["assets"])
    meta = header.get("meta", {})
    if len(rows) != K:
        raise InputError(f"model file has {len(rows)} parameter rows, expected {K}")
    if header["kind"] == "mean":
        return MeanModel(np.vstack(rows), assets, meta)
    iu = np.triu_indices(n)
    theta = np.zeros((K, n, n))
    for k, packed in enumerate(rows):
        if packed.size != n * (n + 1) // 2:
            raise InputError("packed precision row has wrong length")
        block = np.zeros((n, n))
        block[iu] = packed
        theta[k] = block + np.triu(block, 1).T
    return PrecisionModel(theta, assets, meta)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_table(frame: pd.DataFrame, path, header_lines: Sequence[str] = ()) -> None:
    """Write a summary table as comma-separated text with optional
    ``# key=value`` provenance lines on top."""
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(frame.to_csv(float_format=None))
