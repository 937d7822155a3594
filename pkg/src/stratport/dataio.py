"""Panel ingestion and transforms, dataset splits, and synthetic markets.

Panels are pandas DataFrames indexed by trading date (strictly
increasing, no gaps inside a row: rows with missing cells are dropped at
ingestion with a logged count).  Input CSV formats, all with a header
row and ISO dates in the first column:

* returns:    ``date,ASSET1,...,ASSETn``  daily returns as fractions
* spreads:    same shape, nonnegative bid-ask spreads as fractions
* indicators: ``date,vol,inf,mort`` (column names are free-form)
* factors:    ``date,MKTRF,SMB,HML,UMD``

All joins across panels are inner joins on date.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import InputError, UndefinedMetricError
from .fitting import StratumDataset
from .grid import flat_index

log = logging.getLogger(__name__)


def read_panel_csv(path, nonnegative: bool = False) -> pd.DataFrame:
    """Read a date-indexed CSV panel, dropping incomplete rows."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError as exc:
        raise InputError(f"input file missing: {path}") from exc
    if frame.shape[1] < 2:
        raise InputError(f"{path}: need a date column plus at least one value column")
    date_col = frame.columns[0]
    try:
        idx = pd.to_datetime(frame[date_col], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: unparseable dates: {exc}") from exc
    frame = frame.drop(columns=[date_col])
    frame.index = pd.DatetimeIndex(idx, name="date")
    before = len(frame)
    frame = frame.apply(pd.to_numeric, errors="coerce")
    frame = frame.dropna(axis=0, how="any")
    dropped = before - len(frame)
    if dropped:
        log.info("%s: dropped %d incomplete row(s)", path, dropped)
    frame = frame.sort_index()
    if frame.index.has_duplicates:
        raise InputError(f"{path}: duplicate dates")
    if not np.all(np.isfinite(frame.to_numpy())):
        raise InputError(f"{path}: non-finite values")
    if nonnegative and (frame.to_numpy() < 0).any():
        raise InputError(f"{path}: negative values not allowed")
    return frame


def write_panel_csv(frame: pd.DataFrame, path) -> None:
    """Write a panel so that reading it back is bit-exact."""
    out = frame.copy()
    out.index = out.index.strftime("%Y-%m-%d")
    out.index.name = "date"
    out.to_csv(path)


def compute_active_returns(panel: pd.DataFrame, benchmark: str) -> pd.DataFrame:
    """Subtract the benchmark column from every column.

    The benchmark column becomes identically zero and stays in the panel
    (the policy needs it for bookkeeping); model outcomes should use
    :func:`model_columns` to leave it out.
    """
    if benchmark not in panel.columns:
        raise InputError(f"benchmark column {benchmark!r} missing")
    active = panel.sub(panel[benchmark], axis=0)
    return active


def model_columns(panel: pd.DataFrame, benchmark: str) -> list[str]:
    return [c for c in panel.columns if c != benchmark]


def winsorize(
    panel: pd.DataFrame,
    fit_range: tuple,
    lo: float = 0.01,
    hi: float = 0.99,
) -> pd.DataFrame:
    """Clip model-period rows at per-asset quantiles fit on the same range.

    Thresholds are order statistics (lower one for the low tail, higher
    one for the high tail), which makes the operation exactly idempotent.
    Rows outside ``fit_range`` are returned bit-identical: the test
    period is never touched.
    """
    start, end = pd.Timestamp(fit_range[0]), pd.Timestamp(fit_range[1])
    inside = (panel.index >= start) & (panel.index <= end)
    if not inside.any():
        return panel.copy()
    window = panel.loc[inside]
    lo_q = pd.Series(
        np.quantile(window.to_numpy(), lo, axis=0, method="lower"), index=panel.columns
    )
    hi_q = pd.Series(
        np.quantile(window.to_numpy(), hi, axis=0, method="higher"), index=panel.columns
    )
    out = panel.copy()
    out.loc[inside] = window.clip(lower=lo_q, upper=hi_q, axis=1)
    return out


@dataclass(frozen=True)
class SplitSpec:
    """Date ranges and the seeded random 80/20 record split."""

    model_start: str
    model_end: str
    test_start: str
    test_end: str
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.val_fraction < 1.0:
            raise InputError("val_fraction must be in (0, 1)")
        ms, me = pd.Timestamp(self.model_start), pd.Timestamp(self.model_end)
        ts, te = pd.Timestamp(self.test_start), pd.Timestamp(self.test_end)
        if ms > me or ts > te:
            raise InputError("date ranges must be well ordered")
        if not (me < ts or te < ms):
            raise InputError("model and test ranges must be disjoint")


@dataclass(frozen=True)
class LabeledRecords:
    """Chronological (condition, outcome) records."""

    conditions: np.ndarray  # (T,) 1-based flat codes
    outcomes: np.ndarray  # (T, n)
    dates: pd.DatetimeIndex

    def __len__(self) -> int:
        return len(self.conditions)


def _split_rows(index: pd.DatetimeIndex, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Row positions of the train and validation records (shared by
    :func:`split` and :func:`validation_mask` so they always agree)."""
    in_model = (index >= pd.Timestamp(spec.model_start)) & (
        index <= pd.Timestamp(spec.model_end)
    )
    model_idx = np.flatnonzero(in_model)
    if model_idx.size == 0:
        raise InputError("no records in the model period")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(model_idx.size)
    n_val = int(np.floor(spec.val_fraction * model_idx.size))
    return model_idx[perm[n_val:]], model_idx[perm[:n_val]]


def validation_mask(index: pd.DatetimeIndex, spec: SplitSpec) -> np.ndarray:
    """Boolean mask over ``index`` marking the validation records."""
    _, val_rows = _split_rows(index, spec)
    mask = np.zeros(len(index), dtype=bool)
    mask[val_rows] = True
    return mask


def split(
    outcomes: pd.DataFrame,
    conditions: pd.Series,
    spec: SplitSpec,
    num_strata: int,
) -> tuple[StratumDataset, StratumDataset, LabeledRecords]:
    """Partition records into train/validation strata plus test records.

    Model-period records are shuffled with the seeded generator and split
    80/20 by record (validation size is the floor of the fraction); the
    test period stays chronological and untouched.
    """
    if not outcomes.index.equals(conditions.index):
        raise InputError("outcomes and conditions must share their date index")
    z_all = conditions.to_numpy(dtype=np.int64)
    Y_all = outcomes.to_numpy(dtype=float)

    in_test = (outcomes.index >= pd.Timestamp(spec.test_start)) & (
        outcomes.index <= pd.Timestamp(spec.test_end)
    )
    train_rows, val_rows = _split_rows(outcomes.index, spec)

    train = StratumDataset.from_records(z_all[train_rows], Y_all[train_rows], num_strata)
    val = StratumDataset.from_records(z_all[val_rows], Y_all[val_rows], num_strata)
    test = LabeledRecords(
        conditions=z_all[in_test],
        outcomes=Y_all[in_test],
        dates=outcomes.index[in_test],
    )
    return train, val, test


def indicator_diagnostics(indicators: pd.DataFrame, fit_range: tuple) -> pd.DataFrame:
    """Pairwise Pearson correlations of the indicators over the fit range."""
    start, end = pd.Timestamp(fit_range[0]), pd.Timestamp(fit_range[1])
    window = indicators.loc[(indicators.index >= start) & (indicators.index <= end)]
    if len(window) < 2:
        raise InputError("need at least two observations")
    if (window.std(ddof=0) == 0).any():
        raise UndefinedMetricError("constant indicator: correlation undefined")
    return window.corr()


def lagged_moving_average(series: pd.Series, window: int = 15, lag: int = 1) -> pd.Series:
    """Trailing moving average shifted by an extra lag.

    Helper for users who supply a raw volatility index and want the
    standard smoothed, lagged indicator.
    """
    return series.rolling(window).mean().shift(lag)


# ---------------------------------------------------------------------------
# synthetic market


def _business_days(start: str, periods: int) -> pd.DatetimeIndex:
    """Business-day index built in chunks: one giant offset step would
    overflow the nanosecond timedelta range for ~1e5-day spans."""
    chunk = 50000
    if periods <= chunk:
        return pd.bdate_range(start, periods=periods)
    pieces = []
    anchor = pd.Timestamp(start)
    remaining = periods
    while remaining > 0:
        part = pd.bdate_range(anchor, periods=min(chunk, remaining))
        pieces.append(part)
        remaining -= len(part)
        anchor = part[-1] + pd.Timedelta(days=1)
    return pieces[0].append(pieces[1:])


@dataclass
class SyntheticMarket:
    """Deterministic synthetic bundle with known per-stratum ground truth."""

    returns: pd.DataFrame
    spreads: pd.DataFrame
    indicators: pd.DataFrame
    factors: pd.DataFrame
    conditions: pd.Series  # true 1-based flat codes
    mean_truth: np.ndarray  # (K, n_assets) active means
    cov_truth: np.ndarray  # (K, n, n)
    dims: tuple[int, ...]
    assets: tuple[str, ...]
    benchmark: str

    def save(self, outdir) -> None:
        from pathlib import Path

        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        write_panel_csv(self.returns, out / "returns.csv")
        write_panel_csv(self.spreads, out / "spreads.csv")
        write_panel_csv(self.indicators, out / "indicators.csv")
        write_panel_csv(self.factors, out / "factors.csv")
        cond = self.conditions.to_frame(name="condition")
        cond.index = cond.index.strftime("%Y-%m-%d")
        cond.index.name = "date"
        cond.to_csv(out / "true_conditions.csv")


def synthetic_ground_truth(
    dims: Sequence[int],
    n_assets: int,
    seed: int,
    mean_scale: float = 0.002,
    vol_scale: float = 0.01,
) -> tuple[np.ndarray, np.ndarray]:
    """Regime-dependent per-stratum moments for synthetic markets.

    The first grid axis drives the signal: active means flip sign across
    its levels (asset by asset, in alternating directions) and
    volatilities scale up with it.  Later axes add milder mean tilts, so
    neighboring strata stay similar and the coupling graph has something
    to smooth.  A common (pooled) model sees means that average out to
    nearly zero, which is exactly the failure mode the stratified model
    is supposed to beat.
    """
    dims = tuple(int(d) for d in dims)
    K = int(np.prod(dims))
    rng = np.random.default_rng(seed)
    signs = np.array([1.0 if j % 2 == 0 else -1.0 for j in range(n_assets)])
    A = rng.normal(size=(n_assets, n_assets))
    base_corr = A @ A.T
    d = np.sqrt(np.diag(base_corr))
    base_corr = base_corr / np.outer(d, d)
    base_corr = 0.3 * base_corr + 0.7 * np.eye(n_assets)

    means = np.zeros((K, n_assets))
    covs = np.zeros((K, n_assets, n_assets))
    for k in range(K):
        coords = np.asarray(
            np.unravel_index(k, dims), dtype=float
        ) + 1.0  # 1-based levels
        levels = np.where(
            np.asarray(dims) > 1, (coords - 1.0) / np.maximum(np.asarray(dims) - 1.0, 1.0) * 2.0 - 1.0, 0.0
        )
        mu = mean_scale * levels[0] * signs
        for a in range(1, len(dims)):
            mu = mu + 0.3 * mean_scale * levels[a] * np.roll(signs, a)
        vols = vol_scale * (1.0 + 0.5 * levels[0]) * np.ones(n_assets)
        means[k] = mu
        covs[k] = base_corr * np.outer(vols, vols)
    return means, covs


def synth_generate(
    dims: Sequence[int],
    mean_truth: np.ndarray,
    cov_truth: np.ndarray,
    days: int,
    seed: int,
    step_prob: float | None = None,
    assets: Sequence[str] | None = None,
    benchmark: str = "BENCH",
    start_date: str = "2006-01-02",
    benchmark_vol: float = 0.01,
    spread_level: float = 0.0008,
) -> SyntheticMarket:
    """Generate a synthetic market with regime-dependent ground truth.

    The condition path is a clamped random walk on the grid (each axis
    steps with probability ``step_prob``, default tuned so conditions
    move about a quarter of a bin per day).  Daily active returns are
    Gaussian draws from the current stratum's ground-truth moments; raw
    returns add a common benchmark return on top.  Spreads are a constant
    per-asset base plus nonnegative noise.  Everything is a deterministic
    function of the seed.
    """
    dims = tuple(int(d) for d in dims)
    K = int(np.prod(dims))
    mean_truth = np.asarray(mean_truth, dtype=float)
    cov_truth = np.asarray(cov_truth, dtype=float)
    if mean_truth.shape[0] != K or cov_truth.shape[0] != K:
        raise InputError("ground truth must have one row per stratum")
    n = mean_truth.shape[1]
    if cov_truth.shape != (K, n, n):
        raise InputError("cov_truth must be (K, n, n)")
    chols = np.empty_like(cov_truth)
    for k in range(K):
        try:
            chols[k] = np.linalg.cholesky(cov_truth[k])
        except np.linalg.LinAlgError as exc:
            raise InputError(f"ground-truth covariance {k} is not positive definite") from exc
    if step_prob is None:
        step_prob = 0.26 / len(dims)

    rng = np.random.default_rng(seed)
    if assets is None:
        assets = tuple(f"A{j + 1:02d}" for j in range(n))
    else:
        assets = tuple(assets)
        if len(assets) != n:
            raise InputError("one asset name per ground-truth column required")

    dates = _business_days(start_date, days)
    coords = np.empty((days, len(dims)), dtype=np.int64)
    pos = np.array([(d + 1) // 2 for d in dims], dtype=np.int64)  # start mid-grid
    for t in range(days):
        for a in range(len(dims)):
            if rng.random() < step_prob:
                pos[a] += 1 if rng.random() < 0.5 else -1
                pos[a] = min(max(pos[a], 1), dims[a])
        coords[t] = pos
    flat = np.array([flat_index(c, dims) for c in coords], dtype=np.int64)

    active = np.empty((days, n))
    for t in range(days):
        k = flat[t] - 1
        active[t] = mean_truth[k] + chols[k] @ rng.standard_normal(n)
    bench = rng.normal(0.0002, benchmark_vol, size=days)
    raw = np.column_stack([bench, active + bench[:, None]])

    base = spread_level * rng.uniform(0.5, 1.5, size=n + 1)
    spreads = base[None, :] * (1.0 + 0.25 * np.abs(rng.standard_normal((days, n + 1))))

    # indicator value sits inside the current cell; the within-cell offset
    # is redrawn only when the cell changes, so the series moves like a
    # smoothed real indicator instead of chattering across bin boundaries
    jitter = rng.uniform(-0.45, 0.45, size=(days, len(dims)))
    if days > 0:
        idx = np.arange(days)
        for a in range(len(dims)):
            changed = np.ones(days, dtype=bool)
            changed[1:] = coords[1:, a] != coords[:-1, a]
            last_change = np.maximum.accumulate(np.where(changed, idx, 0))
            jitter[:, a] = jitter[last_change, a]
    indicator_names = (
        ("vol", "inf", "mort") if len(dims) == 3 else tuple(f"x{a}" for a in range(len(dims)))
    )
    indicators = pd.DataFrame(coords + jitter, index=dates, columns=list(indicator_names))

    mkt = bench - 0.0001 + rng.normal(0.0, 0.002, size=days)
    factors = pd.DataFrame(
        {
            "MKTRF": mkt,
            "SMB": rng.normal(0.0, 0.004, size=days),
            "HML": rng.normal(0.0, 0.004, size=days),
            "UMD": rng.normal(0.0, 0.004, size=days),
        },
        index=dates,
    )

    columns = [benchmark, *assets]
    return SyntheticMarket(
        returns=pd.DataFrame(raw, index=dates, columns=columns),
        spreads=pd.DataFrame(spreads, index=dates, columns=columns),
        indicators=indicators,
        factors=factors,
        conditions=pd.Series(flat, index=dates, name="condition"),
        mean_truth=mean_truth,
        cov_truth=cov_truth,
        dims=dims,
        assets=assets,
        benchmark=benchmark,
    )
