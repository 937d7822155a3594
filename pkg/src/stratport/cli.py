"""Command-line front end.

One YAML config drives the whole workflow; each subcommand runs one
stage and writes its artifacts into the run directory.  Exit codes:
0 success, 2 input/configuration error, 3 numerical or convergence
failure.  Failures print a one-line JSON error record to stderr.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import workflow
from .exceptions import StratportError


class App:
    def __init__(self, cfg: workflow.RunConfig, out: Path, jobs: int):
        self.cfg = cfg
        self.out = out
        self.jobs = jobs


def _stage(fn):
    @functools.wraps(fn)
    def wrapper(app, *args, **kwargs):
        try:
            return fn(app, *args, **kwargs)
        except StratportError as exc:
            record = {"error": type(exc).__name__, "message": str(exc)}
            click.echo(json.dumps(record, sort_keys=True), err=True)
            sys.exit(exc.exit_code)

    return wrapper


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None, help="run directory (default: config `out`)")
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--jobs", type=int, default=1, show_default=True, help="parallel tuner evaluations")
@click.pass_context
def main(ctx, config_path, out, seed, jobs):
    """Stratified market models, trading policy, and backtest workflow."""
    try:
        cfg = workflow.RunConfig.from_yaml(config_path)
        if seed is not None:
            cfg = cfg.replace(seed=seed)
        if out is not None:
            cfg = cfg.replace(out=str(out))
    except StratportError as exc:
        click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc)}), err=True)
        sys.exit(exc.exit_code)
    ctx.obj = App(cfg, Path(cfg.out), jobs)


@main.command()
@click.pass_obj
@_stage
def ingest(app):
    """Validate input panels and emit indicator diagnostics."""
    report = workflow.ingest(app.cfg, app.out)
    click.echo(f"ingested {report['days']} aligned days -> {app.out}")


@main.command("bin")
@click.pass_obj
@_stage
def bin_cmd(app):
    """Fit quantile bins, encode conditions, and build the strata graph."""
    report = workflow.bin_conditions(app.cfg, app.out)
    click.echo(
        f"{report['populated_model_strata']} of {report['num_strata']} strata populated; "
        f"mean condition step {report['mean_condition_step']:.3f}"
    )


@main.command("tune-return")
@click.pass_obj
@_stage
def tune_return(app):
    """Coarse/fine grid search for the return model."""
    res = workflow.tune_return(app.cfg, app.out, jobs=app.jobs)
    click.echo(f"selected {res.selected} (validation correlation {res.selected_score:.4f})")


@main.command("tune-risk")
@click.pass_obj
@_stage
def tune_risk(app):
    """Coarse/fine grid search for the risk model."""
    res = workflow.tune_risk(app.cfg, app.out, jobs=app.jobs)
    click.echo(f"selected {res.selected} (validation loss {res.selected_score:.4f})")


@main.command("fit-return")
@click.option("--refit-all", is_flag=True, help="pool train+validation records")
@click.option("--from-tuned", is_flag=True, help="use tune-return's selection")
@click.pass_obj
@_stage
def fit_return(app, refit_all, from_tuned):
    """Fit the final return model and its summary tables."""
    model = workflow.fit_return(app.cfg, app.out, refit_all=refit_all, from_tuned=from_tuned)
    click.echo(f"return model fit (converged={model.meta['converged']})")


@main.command("fit-risk")
@click.option("--refit-all", is_flag=True, help="pool train+validation records")
@click.option("--from-tuned", is_flag=True, help="use tune-risk's selection")
@click.pass_obj
@_stage
def fit_risk(app, refit_all, from_tuned):
    """Fit the final risk model and its summary tables."""
    model = workflow.fit_risk(app.cfg, app.out, refit_all=refit_all, from_tuned=from_tuned)
    click.echo(f"risk model fit (converged={model.meta['converged']})")


@main.command("tune-policy")
@click.option(
    "--baseline",
    type=click.Choice(["stratified", "common"]),
    default="stratified",
    show_default=True,
)
@click.pass_obj
@_stage
def tune_policy(app, baseline):
    """Grid search over the shorting/trading aversion knobs."""
    res = workflow.tune_policy(app.cfg, app.out, jobs=app.jobs, baseline=baseline)
    click.echo(f"selected {res.selected} (validation annualized return {res.selected_score:.4%})")


@main.command()
@click.option(
    "--baseline",
    type=click.Choice(["stratified", "common"]),
    default="stratified",
    show_default=True,
)
@click.option("--from-tuned", is_flag=True, help="use tune-policy's selection")
@click.pass_obj
@_stage
def backtest(app, baseline, from_tuned):
    """Run the test-period backtest and emit ledger, report, and plots."""
    payload = workflow.backtest(app.cfg, app.out, baseline=baseline, from_tuned=from_tuned)
    rep = payload["report"]
    click.echo(
        f"{baseline}: return {rep['annualized_return']:.2%}, risk {rep['annualized_risk']:.2%}, "
        f"Sharpe {rep['sharpe']:.3f}, max drawdown {rep['max_drawdown']:.2%}"
    )


@main.command()
@click.pass_obj
@_stage
def synth(app):
    """Generate a synthetic dataset bundle."""
    report = workflow.synth(app.cfg, app.out)
    click.echo(f"synthetic market: dims {report['dims']}, {report['days']} days")


if __name__ == "__main__":
    main()
