"""Batch workflow behind the command-line interface.

Each stage reads its inputs from the run directory written by earlier
stages, does one job, and writes artifacts whose non-plot content is a
deterministic function of the configuration and inputs (every file
carries the config hash and seed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd
import yaml

from . import dataio, plots, presets
from .backtest import (
    annualized_return,
    factor_regression,
    performance_metrics,
    run_backtest,
)
from .exceptions import InputError
from .fitting import StratumDataset
from .grid import (
    QuantileBins,
    RegularizationGraph,
    assign_conditions,
    build_product_chain_graph,
    compute_quantile_bins,
)
from .models import (
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
    write_table,
)
from .policy import PolicyParams
from .tuner import Grid, TuneResult, grid_search


@dataclass(frozen=True)
class RunConfig:
    """Resolved run configuration (see README for the YAML schema)."""

    returns_path: str
    spreads_path: str
    indicators_path: str
    benchmark: str
    model_start: str
    model_end: str
    test_start: str
    test_end: str
    factors_path: str | None = None
    val_fraction: float = 0.2
    seed: int = 0
    n_bins: int = 10
    huber_halfwidth: float = 0.01
    kappa: float = 0.0005
    sigma: float = 0.0045
    leverage_max: float = 2.0
    w_min: float = -0.25
    w_max: float = 0.4
    rho: float = 1.0
    max_iter: int = 20000
    tol_abs: float = 1e-6
    tol_rel: float = 1e-5
    return_hypers: Mapping[str, float] = field(
        default_factory=lambda: dict(presets.TUNED_RETURN_HYPERS)
    )
    risk_hypers: Mapping[str, float] = field(
        default_factory=lambda: dict(presets.TUNED_RISK_HYPERS)
    )
    gamma_sc: float = presets.TUNED_POLICY_GAMMAS["stratified"][0]
    gamma_tc: float = presets.TUNED_POLICY_GAMMAS["stratified"][1]
    gamma_sc_common: float = presets.TUNED_POLICY_GAMMAS["common"][0]
    gamma_tc_common: float = presets.TUNED_POLICY_GAMMAS["common"][1]
    spread_window: int = 15
    grids: Mapping[str, object] = field(default_factory=dict)
    synth: Mapping[str, object] = field(default_factory=dict)
    out: str = "run"

    def __post_init__(self) -> None:
        object.__setattr__(self, "return_hypers", dict(self.return_hypers))
        object.__setattr__(self, "risk_hypers", dict(self.risk_hypers))
        object.__setattr__(self, "grids", dict(self.grids))
        object.__setattr__(self, "synth", dict(self.synth))
        dataio.SplitSpec(  # validates ranges and fraction
            self.model_start, self.model_end, self.test_start, self.test_end,
            self.val_fraction, self.seed,
        )

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        data = raw.get("data", {})
        dates = raw.get("dates", {})
        split = raw.get("split", {})
        consts = raw.get("constants", {})
        fit = raw.get("fit", {})
        policy = raw.get("policy", {})
        try:
            return cls(
                returns_path=data["returns"],
                spreads_path=data["spreads"],
                indicators_path=data["indicators"],
                factors_path=data.get("factors"),
                benchmark=data.get("benchmark", presets.DEFAULT_BENCHMARK),
                model_start=str(dates["model_start"]),
                model_end=str(dates["model_end"]),
                test_start=str(dates["test_start"]),
                test_end=str(dates["test_end"]),
                val_fraction=float(split.get("val_fraction", 0.2)),
                seed=int(split.get("seed", 0)),
                n_bins=int(raw.get("grid", {}).get("bins", 10)),
                huber_halfwidth=float(consts.get("huber_halfwidth", 0.01)),
                kappa=float(consts.get("kappa", 0.0005)),
                sigma=float(consts.get("sigma", 0.0045)),
                leverage_max=float(consts.get("leverage_max", 2.0)),
                w_min=float(consts.get("w_min", -0.25)),
                w_max=float(consts.get("w_max", 0.4)),
                rho=float(fit.get("rho", 1.0)),
                max_iter=int(fit.get("max_iter", 20000)),
                tol_abs=float(fit.get("tol_abs", 1e-6)),
                tol_rel=float(fit.get("tol_rel", 1e-5)),
                return_hypers=raw.get("return_hypers", dict(presets.TUNED_RETURN_HYPERS)),
                risk_hypers=raw.get("risk_hypers", dict(presets.TUNED_RISK_HYPERS)),
                gamma_sc=float(policy.get("gamma_sc", presets.TUNED_POLICY_GAMMAS["stratified"][0])),
                gamma_tc=float(policy.get("gamma_tc", presets.TUNED_POLICY_GAMMAS["stratified"][1])),
                gamma_sc_common=float(
                    policy.get("gamma_sc_common", presets.TUNED_POLICY_GAMMAS["common"][0])
                ),
                gamma_tc_common=float(
                    policy.get("gamma_tc_common", presets.TUNED_POLICY_GAMMAS["common"][1])
                ),
                spread_window=int(policy.get("window", 15)),
                grids=raw.get("grids", {}),
                synth=raw.get("synth", {}),
                out=str(raw.get("out", "run")),
            )
        except KeyError as exc:
            raise InputError(f"config key missing: {exc}") from exc

    def replace(self, **kwargs) -> "RunConfig":
        from dataclasses import replace as _replace

        return _replace(self, **kwargs)

    def canonical(self) -> dict:
        from dataclasses import asdict

        return json.loads(json.dumps(asdict(self), sort_keys=True, default=str))

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def split_spec(self) -> dataio.SplitSpec:
        return dataio.SplitSpec(
            self.model_start, self.model_end, self.test_start, self.test_end,
            self.val_fraction, self.seed,
        )

    @property
    def model_range(self) -> tuple[str, str]:
        return (self.model_start, self.model_end)

    def provenance(self) -> list[str]:
        return [f"config_hash={self.config_hash}", f"seed={self.seed}"]


def _write_json(obj: dict, path, cfg: RunConfig) -> None:
    payload = {"config_hash": cfg.config_hash, "seed": cfg.seed}
    payload.update(obj)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _fit_kwargs(cfg: RunConfig) -> dict:
    return dict(rho=cfg.rho, max_iter=cfg.max_iter, tol_abs=cfg.tol_abs, tol_rel=cfg.tol_rel)


def _grid_from_config(cfg: RunConfig, name: str, preset: Grid) -> Grid:
    spec = cfg.grids.get(name, "preset")
    if spec == "preset" or spec is None:
        return preset
    if isinstance(spec, Mapping):
        reg = spec.get("regularization_axes")
        axes = {k: tuple(float(x) for x in v) for k, v in spec.items() if k != "regularization_axes"}
        return Grid(axes=axes, stage=preset.stage, regularization_axes=reg)
    raise InputError(f"grid {name!r} must be 'preset' or an axes mapping")


# ---------------------------------------------------------------------------
# stages


def ingest(cfg: RunConfig, out: Path) -> dict:
    """Validate and normalize the input panels; emit indicator diagnostics."""
    out.mkdir(parents=True, exist_ok=True)
    panels = out / "panels"
    panels.mkdir(exist_ok=True)
    returns = dataio.read_panel_csv(cfg.returns_path)
    spreads = dataio.read_panel_csv(cfg.spreads_path, nonnegative=True)
    indicators = dataio.read_panel_csv(cfg.indicators_path)
    if cfg.benchmark not in returns.columns:
        raise InputError(f"benchmark {cfg.benchmark!r} not among return columns")
    if list(returns.columns) != list(spreads.columns):
        raise InputError("returns and spreads must list the same assets")

    common_dates = returns.index.intersection(spreads.index).intersection(indicators.index)
    if cfg.factors_path:
        factors = dataio.read_panel_csv(cfg.factors_path)
        dataio.write_panel_csv(factors.loc[factors.index.isin(common_dates)], panels / "factors.csv")
    returns = returns.loc[common_dates]
    spreads = spreads.loc[common_dates]
    indicators = indicators.loc[common_dates]
    if len(common_dates) == 0:
        raise InputError("no overlapping dates across panels")

    dataio.write_panel_csv(returns, panels / "returns.csv")
    dataio.write_panel_csv(spreads, panels / "spreads.csv")
    dataio.write_panel_csv(indicators, panels / "indicators.csv")

    corr = dataio.indicator_diagnostics(indicators, cfg.model_range)
    diag = out / "diagnostics"
    diag.mkdir(exist_ok=True)
    write_table(corr, diag / "indicator_correlations.csv", cfg.provenance())
    _write_json(
        {"days": len(common_dates), "assets": list(returns.columns)},
        out / "ingest_report.json",
        cfg,
    )
    return {"days": len(common_dates)}


def _load_panels(cfg: RunConfig, out: Path):
    panels = out / "panels"
    returns = dataio.read_panel_csv(panels / "returns.csv")
    spreads = dataio.read_panel_csv(panels / "spreads.csv", nonnegative=True)
    indicators = dataio.read_panel_csv(panels / "indicators.csv")
    return returns, spreads, indicators


def bin_conditions(cfg: RunConfig, out: Path) -> dict:
    """Fit quantile bins on the model period, encode every day's condition,
    and build the coupling graph."""
    returns, _, indicators = _load_panels(cfg, out)
    bins = compute_quantile_bins(indicators, cfg.model_range, n_bins=cfg.n_bins)
    conditions = assign_conditions(indicators, bins)
    graph = build_product_chain_graph(bins.dims, groups=bins.indicators)

    bins.save(out / "bins.json")
    graph.save(out / "graph.json")
    graph.write_edge_list(
        out / "graph_edges.txt",
        {g: 1.0 for g in graph.groups},
    )
    cond = conditions.to_frame()
    cond.index = cond.index.strftime("%Y-%m-%d")
    cond.index.name = "date"
    with open(out / "conditions.csv", "w") as fh:
        for line in cfg.provenance():
            fh.write(f"# {line}\n")
        fh.write(cond.to_csv())

    in_model = (conditions.index >= pd.Timestamp(cfg.model_start)) & (
        conditions.index <= pd.Timestamp(cfg.model_end)
    )
    populated = int(pd.unique(conditions[in_model]).size)
    coords = np.array(
        [np.unravel_index(z - 1, bins.dims) for z in conditions.to_numpy()], dtype=float
    )
    steps = np.abs(np.diff(coords, axis=0)).sum(axis=1)
    report = {
        "num_strata": graph.num_nodes,
        "num_edges": graph.num_edges,
        "populated_model_strata": populated,
        "mean_condition_step": float(steps.mean()) if steps.size else 0.0,
    }
    _write_json(report, out / "bin_report.json", cfg)
    (out / "plots").mkdir(exist_ok=True)
    plots.conditions_plot(
        conditions, bins.dims, out / "plots" / "conditions.png", split_date=cfg.test_start
    )
    return report


def _load_conditions(cfg: RunConfig, out: Path) -> pd.Series:
    frame = pd.read_csv(out / "conditions.csv", comment="#", index_col=0, parse_dates=True)
    return frame["condition"].astype(np.int64)


@dataclass
class ModelingData:
    """Everything the fitting/tuning stages share."""

    active: pd.DataFrame  # winsorized active returns incl. zero benchmark column
    raw_active: pd.DataFrame  # un-winsorized active returns
    spreads: pd.DataFrame
    conditions: pd.Series
    graph: RegularizationGraph
    bins: QuantileBins
    train: StratumDataset
    val: StratumDataset
    test: dataio.LabeledRecords
    assets: tuple[str, ...]


def prepare_modeling(cfg: RunConfig, out: Path) -> ModelingData:
    returns, spreads, _ = _load_panels(cfg, out)
    conditions = _load_conditions(cfg, out)
    if not returns.index.equals(conditions.index):
        raise InputError("conditions and panels disagree; rerun `bin`")
    bins = QuantileBins.load(out / "bins.json")
    graph = RegularizationGraph.load(out / "graph.json")

    raw_active = dataio.compute_active_returns(returns, cfg.benchmark)
    active = dataio.winsorize(raw_active, cfg.model_range)
    assets = tuple(dataio.model_columns(active, cfg.benchmark))
    train, val, test = dataio.split(
        active[list(assets)], conditions, cfg.split_spec, graph.num_nodes
    )
    return ModelingData(
        active=active,
        raw_active=raw_active,
        spreads=spreads,
        conditions=conditions,
        graph=graph,
        bins=bins,
        train=train,
        val=val,
        test=test,
        assets=assets,
    )


def _check_hyper_keys(hypers: Mapping[str, float], graph: RegularizationGraph, local: bool):
    expected = set(graph.groups) | ({"loc"} if local else set())
    if set(hypers) != expected:
        raise InputError(f"hyper-parameters must have keys {sorted(expected)}, got {sorted(hypers)}")


def tune_return(cfg: RunConfig, out: Path, jobs: int = 1) -> TuneResult:
    """Coarse-to-fine search for the return model, scored by validation
    correlation (larger is better)."""
    data = prepare_modeling(cfg, out)
    zs, ys = data.val.records()

    def evaluator(combo: dict) -> float:
        model = fit_return_model(
            data.train,
            data.graph,
            local_gamma=combo["loc"],
            edge_gammas={k: v for k, v in combo.items() if k != "loc"},
            half_width=cfg.huber_halfwidth,
            assets=data.assets,
            **_fit_kwargs(cfg),
        )
        return validation_correlation(model, zs, ys)

    tune_dir = out / "tune"
    tune_dir.mkdir(exist_ok=True)
    results = {}
    for stage, preset in (("coarse", presets.RETURN_COARSE_GRID), ("fine", presets.RETURN_FINE_GRID)):
        grid = _grid_from_config(cfg, f"return_{stage}", preset)
        res = grid_search(grid, evaluator, direction="max", jobs=jobs)
        write_table(res.table(), tune_dir / f"return_{stage}.csv", cfg.provenance())
        results[stage] = res
    final = results["fine"]
    _write_json(
        {"selected": final.selected, "score": final.selected_score, "rationale": final.rationale},
        tune_dir / "return_selected.json",
        cfg,
    )
    return final


def tune_risk(cfg: RunConfig, out: Path, jobs: int = 1) -> TuneResult:
    """Coarse-to-fine search for the risk model, scored by validation
    average negative log-likelihood (smaller is better)."""
    data = prepare_modeling(cfg, out)
    zs, ys = data.val.records()

    def evaluator(combo: dict) -> float:
        model = fit_risk_model(
            data.train,
            data.graph,
            edge_gammas=dict(combo),
            assets=data.assets,
            **_fit_kwargs(cfg),
        )
        return validation_nll(model, zs, ys)

    tune_dir = out / "tune"
    tune_dir.mkdir(exist_ok=True)
    results = {}
    for stage, preset in (("coarse", presets.RISK_COARSE_GRID), ("fine", presets.RISK_FINE_GRID)):
        grid = _grid_from_config(cfg, f"risk_{stage}", preset)
        res = grid_search(grid, evaluator, direction="min", jobs=jobs)
        write_table(res.table(), tune_dir / f"risk_{stage}.csv", cfg.provenance())
        results[stage] = res
    final = results["fine"]
    _write_json(
        {"selected": final.selected, "score": final.selected_score, "rationale": final.rationale},
        tune_dir / "risk_selected.json",
        cfg,
    )
    return final


def _selected_hypers(out: Path, name: str) -> dict | None:
    path = out / "tune" / f"{name}_selected.json"
    if not path.exists():
        return None
    with open(path) as fh:
        return json.load(fh)["selected"]


def fit_return(cfg: RunConfig, out: Path, refit_all: bool = False, from_tuned: bool = False) -> MeanModel:
    """Fit the final return model and emit its file plus summary table."""
    data = prepare_modeling(cfg, out)
    hypers = dict(cfg.return_hypers)
    if from_tuned:
        tuned = _selected_hypers(out, "return")
        if tuned is None:
            raise InputError("no tuned return hyper-parameters; run tune-return first")
        hypers = tuned
    _check_hyper_keys(hypers, data.graph, local=True)

    train = data.train
    if refit_all:
        zs = np.concatenate([data.train.records()[0], data.val.records()[0]])
        ys = np.vstack([data.train.records()[1], data.val.records()[1]])
        train = StratumDataset.from_records(zs, ys, data.graph.num_nodes)
    model = fit_return_model(
        train,
        data.graph,
        local_gamma=hypers["loc"],
        edge_gammas={k: v for k, v in hypers.items() if k != "loc"},
        half_width=cfg.huber_halfwidth,
        assets=data.assets,
        **_fit_kwargs(cfg),
    )
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    model.meta["config_hash"] = cfg.config_hash
    model.meta["refit_all"] = refit_all
    save_model(model, models_dir / "return_model.txt")

    baseline = common_mean(data.train)
    write_table(
        mean_summary(model, baseline), models_dir / "return_summary.csv", cfg.provenance()
    )
    zs_v, ys_v = data.val.records()
    zs_t, ys_t = data.train.records()
    common_model = MeanModel.constant(baseline, data.graph.num_nodes, data.assets)
    _write_json(
        {
            "train_correlation": validation_correlation(model, zs_t, ys_t),
            "validation_correlation": validation_correlation(model, zs_v, ys_v),
            "common_train_correlation": validation_correlation(common_model, zs_t, ys_t),
            "common_validation_correlation": validation_correlation(common_model, zs_v, ys_v),
            "hypers": hypers,
            "converged": model.meta["converged"],
        },
        models_dir / "return_metrics.json",
        cfg,
    )
    return model


def fit_risk(cfg: RunConfig, out: Path, refit_all: bool = False, from_tuned: bool = False) -> PrecisionModel:
    """Fit the final risk model and emit its file plus summary tables."""
    data = prepare_modeling(cfg, out)
    hypers = dict(cfg.risk_hypers)
    if from_tuned:
        tuned = _selected_hypers(out, "risk")
        if tuned is None:
            raise InputError("no tuned risk hyper-parameters; run tune-risk first")
        hypers = tuned
    _check_hyper_keys(hypers, data.graph, local=False)

    train = data.train
    if refit_all:
        zs = np.concatenate([data.train.records()[0], data.val.records()[0]])
        ys = np.vstack([data.train.records()[1], data.val.records()[1]])
        train = StratumDataset.from_records(zs, ys, data.graph.num_nodes)
    model = fit_risk_model(
        train, data.graph, edge_gammas=hypers, assets=data.assets, **_fit_kwargs(cfg)
    )
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    model.meta["config_hash"] = cfg.config_hash
    model.meta["refit_all"] = refit_all
    save_model(model, models_dir / "risk_model.txt")

    baseline = common_precision(data.train)
    write_table(
        volatility_summary(model, baseline), models_dir / "volatility_summary.csv", cfg.provenance()
    )
    reference = data.assets[0]
    write_table(
        correlation_summary(model, baseline, reference_asset=reference),
        models_dir / "correlation_summary.csv",
        cfg.provenance(),
    )
    zs_v, ys_v = data.val.records()
    zs_t, ys_t = data.train.records()
    common_model = PrecisionModel.constant(baseline, data.graph.num_nodes, data.assets)
    _write_json(
        {
            "train_nll": validation_nll(model, zs_t, ys_t),
            "validation_nll": validation_nll(model, zs_v, ys_v),
            "common_train_nll": validation_nll(common_model, zs_t, ys_t),
            "common_validation_nll": validation_nll(common_model, zs_v, ys_v),
            "hypers": hypers,
            "converged": model.meta["converged"],
            "reference_asset": reference,
        },
        models_dir / "risk_metrics.json",
        cfg,
    )
    return model


def _policy_params(cfg: RunConfig, n: int) -> PolicyParams:
    return PolicyParams(
        kappa=np.full(n, cfg.kappa),
        w_min=np.full(n, cfg.w_min),
        w_max=np.full(n, cfg.w_max),
        sigma=cfg.sigma,
        leverage_max=cfg.leverage_max,
    )


def _load_models(out: Path) -> tuple[MeanModel, PrecisionModel]:
    models_dir = out / "models"
    mean_path = models_dir / "return_model.txt"
    risk_path = models_dir / "risk_model.txt"
    if not mean_path.exists() or not risk_path.exists():
        raise InputError("model files missing; run fit-return and fit-risk first")
    mean_model = load_model(mean_path)
    risk_model = load_model(risk_path)
    if not isinstance(mean_model, MeanModel) or not isinstance(risk_model, PrecisionModel):
        raise InputError("model files have unexpected kinds")
    return mean_model, risk_model


def _common_models(data: ModelingData) -> tuple[MeanModel, PrecisionModel]:
    """Pooled baselines over the whole model period (train plus validation)."""
    zs = np.concatenate([data.train.records()[0], data.val.records()[0]])
    ys = np.vstack([data.train.records()[1], data.val.records()[1]])
    pooled = StratumDataset.from_records(zs, ys, data.graph.num_nodes)
    K = data.graph.num_nodes
    return (
        MeanModel.constant(common_mean(pooled), K, data.assets),
        PrecisionModel.constant(common_precision(pooled), K, data.assets),
    )


def tune_policy(cfg: RunConfig, out: Path, jobs: int = 1, baseline: str = "stratified") -> TuneResult:
    """Grid over the two trading-aversion knobs: one model-period backtest
    per pair, scored by annualized net return over the validation days."""
    data = prepare_modeling(cfg, out)
    if baseline == "common":
        mean_model, risk_model = _common_models(data)
    else:
        mean_model, risk_model = _load_models(out)

    in_model = (data.active.index >= pd.Timestamp(cfg.model_start)) & (
        data.active.index <= pd.Timestamp(cfg.model_end)
    )
    returns_m = data.raw_active.loc[in_model]
    spreads_m = data.spreads.loc[in_model]
    conditions_m = data.conditions.loc[in_model]
    val_mask = dataio.validation_mask(data.active.index, cfg.split_spec)[in_model]

    params = _policy_params(cfg, len(data.assets) + 1)

    def evaluator(combo: dict) -> float:
        res = run_backtest(
            returns_m,
            spreads_m,
            conditions_m,
            mean_model,
            risk_model,
            params.with_gammas(combo["gamma_sc"], combo["gamma_tc"]),
            cfg.benchmark,
            window=cfg.spread_window,
            label=baseline,
        )
        # the first model-period row only seeds the spread history
        val_days = res.net[val_mask[1:]]
        if len(val_days) == 0:
            raise InputError("no validation days inside the backtest range")
        return annualized_return(val_days)

    grid = _grid_from_config(cfg, "policy", presets.POLICY_GRID)
    res = grid_search(grid, evaluator, direction="max", jobs=jobs)
    tune_dir = out / "tune"
    tune_dir.mkdir(exist_ok=True)
    name = "policy" if baseline == "stratified" else "policy_common"
    write_table(res.table(), tune_dir / f"{name}_scores.csv", cfg.provenance())
    _write_json(
        {"selected": res.selected, "score": res.selected_score, "rationale": res.rationale},
        tune_dir / f"{name}_selected.json",
        cfg,
    )
    (out / "plots").mkdir(exist_ok=True)
    plots.policy_heatmap(res, out / "plots" / f"{name}_heatmap.png")
    return res


def backtest(
    cfg: RunConfig,
    out: Path,
    baseline: str = "stratified",
    from_tuned: bool = False,
) -> dict:
    """Test-period backtest with reports, plots, and factor attribution."""
    data = prepare_modeling(cfg, out)
    if baseline == "common":
        mean_model, risk_model = _common_models(data)
        gammas = (cfg.gamma_sc_common, cfg.gamma_tc_common)
    else:
        mean_model, risk_model = _load_models(out)
        gammas = (cfg.gamma_sc, cfg.gamma_tc)
    if from_tuned:
        name = "policy" if baseline == "stratified" else "policy_common"
        tuned = _selected_hypers(out, name)
        if tuned is None:
            raise InputError("no tuned policy knobs; run tune-policy first")
        gammas = (tuned["gamma_sc"], tuned["gamma_tc"])

    in_window = data.active.index <= pd.Timestamp(cfg.test_end)
    returns_w = data.raw_active.loc[in_window]
    spreads_w = data.spreads.loc[in_window]
    conditions_w = data.conditions.loc[in_window]

    params = _policy_params(cfg, len(data.assets) + 1).with_gammas(*gammas)
    result = run_backtest(
        returns_w,
        spreads_w,
        conditions_w,
        mean_model,
        risk_model,
        params,
        cfg.benchmark,
        window=cfg.spread_window,
        label=baseline,
        trade_start=cfg.test_start,
    )
    report = performance_metrics(result)

    bt_dir = out / "backtest" / baseline
    bt_dir.mkdir(parents=True, exist_ok=True)
    ledger = result.ledger()
    ledger.index = ledger.index.strftime("%Y-%m-%d")
    ledger.index.name = "date"
    with open(bt_dir / "ledger.csv", "w") as fh:
        for line in cfg.provenance():
            fh.write(f"# {line}\n")
        fh.write(ledger.to_csv())
    payload = {
        "report": report.to_dict(),
        "meta": result.meta,
        "infeasible_days": int(result.infeasible.sum()),
    }

    if cfg.factors_path:
        factors_file = out / "panels" / "factors.csv"
        if factors_file.exists():
            factors = dataio.read_panel_csv(factors_file)
            net = pd.Series(result.net, index=result.dates, name="net")
            reg = factor_regression(net, factors)
            payload["factor_regression"] = {
                "coefficients": reg.coefficients,
                "alpha_daily": reg.alpha_daily,
                "alpha_annualized": reg.alpha_annualized,
                "observations": reg.observations,
            }

    _write_json(payload, bt_dir / "report.json", cfg)
    plot_dir = out / "plots"
    plot_dir.mkdir(exist_ok=True)
    plots.value_plot([result], plot_dir / f"value_{baseline}.png")
    plots.holdings_plot(result, plot_dir / f"holdings_{baseline}.png")
    return payload


def synth(cfg: RunConfig, out: Path) -> dict:
    """Generate a synthetic dataset bundle under ``<out>/synth``."""
    opts = dict(cfg.synth)
    dims = tuple(int(d) for d in opts.get("dims", (3, 3, 3)))
    days = int(opts.get("days", 600))
    seed = int(opts.get("seed", cfg.seed))
    n_assets = int(opts.get("n_assets", 4))
    means, covs = dataio.synthetic_ground_truth(
        dims,
        n_assets,
        seed,
        mean_scale=float(opts.get("mean_scale", 0.002)),
        vol_scale=float(opts.get("vol_scale", 0.01)),
    )
    market = dataio.synth_generate(
        dims,
        means,
        covs,
        days=days,
        seed=seed,
        benchmark=str(opts.get("benchmark", cfg.benchmark)),
        start_date=str(opts.get("start_date", "2006-01-02")),
    )
    synth_dir = out / "synth"
    market.save(synth_dir)
    _write_json(
        {
            "dims": list(dims),
            "days": days,
            "synth_seed": seed,
            "assets": list(market.assets),
            "benchmark": market.benchmark,
        },
        synth_dir / "manifest.json",
        cfg,
    )
    return {"days": days, "dims": dims}
