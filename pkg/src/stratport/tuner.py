"""Hyper-parameter grid search.

Grids are named axes of positive values; every combination is evaluated
(failures score as worst), and among combinations whose score is within a
relative tolerance of the best, the most regularized one wins — largest
product over the regularization axes, first-in-grid-order on remaining
ties.  The whole procedure is deterministic and order-independent.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import InputError, TuningError


@dataclass(frozen=True)
class Grid:
    """Finite Cartesian grid of positive hyper-parameter values."""

    axes: Mapping[str, tuple[float, ...]]
    stage: str = "coarse"
    regularization_axes: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        axes = {str(k): tuple(float(x) for x in v) for k, v in self.axes.items()}
        if not axes:
            raise InputError("grid needs at least one axis")
        for name, vals in axes.items():
            if len(vals) == 0:
                raise InputError(f"axis {name!r} is empty")
            if any(x <= 0 for x in vals):
                raise InputError(f"axis {name!r} has nonpositive values")
        object.__setattr__(self, "axes", axes)
        if self.stage not in ("coarse", "fine"):
            raise InputError("stage must be 'coarse' or 'fine'")
        reg = self.regularization_axes
        if reg is None:
            reg = tuple(axes)
        else:
            reg = tuple(str(r) for r in reg)
            unknown = [r for r in reg if r not in axes]
            if unknown:
                raise InputError(f"unknown regularization axes: {unknown}")
        object.__setattr__(self, "regularization_axes", reg)

    @property
    def size(self) -> int:
        return int(np.prod([len(v) for v in self.axes.values()]))

    def combinations(self) -> list[dict[str, float]]:
        names = list(self.axes)
        return [
            dict(zip(names, combo))
            for combo in itertools.product(*(self.axes[n] for n in names))
        ]


@dataclass
class TuneResult:
    """Score table over a grid plus the selected combination."""

    grid: Grid
    combos: list[dict[str, float]]
    scores: np.ndarray
    errors: list[str | None]
    selected_index: int
    direction: str
    rationale: str

    @property
    def selected(self) -> dict[str, float]:
        return self.combos[self.selected_index]

    @property
    def selected_score(self) -> float:
        return float(self.scores[self.selected_index])

    def table(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.combos)
        frame["score"] = self.scores
        frame["error"] = [e if e is not None else "" for e in self.errors]
        frame["selected"] = False
        frame.loc[self.selected_index, "selected"] = True
        return frame


def log_spaced(count: int, lo: float, hi: float) -> tuple[float, ...]:
    """Geometric sequence from ``lo`` to ``hi`` inclusive."""
    if lo <= 0 or hi <= 0:
        raise InputError("log_spaced bounds must be positive")
    if count < 2:
        raise InputError("log_spaced needs at least two points")
    return tuple(float(x) for x in np.geomspace(lo, hi, count))


def grid_search(
    grid: Grid,
    evaluator: Callable[[dict[str, float]], float],
    direction: str = "max",
    rel_tol: float = 0.01,
    jobs: int = 1,
) -> TuneResult:
    """Evaluate every combination and select the best, biased toward more
    regularization.

    ``evaluator`` maps a combination dict to a scalar score; an exception
    is recorded and scored as the worst possible value.  Among all
    combinations within ``rel_tol`` (relative) of the best score, the one
    with the largest product of regularization-axis values is selected;
    any remaining tie goes to the earliest combination in grid order.
    """
    if direction not in ("max", "min"):
        raise InputError("direction must be 'max' or 'min'")
    combos = grid.combinations()
    worst = -np.inf if direction == "max" else np.inf

    def run_one(combo):
        try:
            return float(evaluator(combo)), None
        except Exception as exc:  # noqa: BLE001 — failures become worst scores
            return worst, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_one, combos))
    else:
        outcomes = [run_one(c) for c in combos]
    scores = np.array([s for s, _ in outcomes])
    errors = [e for _, e in outcomes]

    valid = np.isfinite(scores)
    if not np.any(valid):
        raise TuningError("every hyper-parameter evaluation failed")
    best = scores[valid].max() if direction == "max" else scores[valid].min()
    slack = rel_tol * abs(best)
    if direction == "max":
        eligible = np.flatnonzero(valid & (scores >= best - slack))
    else:
        eligible = np.flatnonzero(valid & (scores <= best + slack))

    def reg_product(i: int) -> float:
        return float(np.prod([combos[i][a] for a in grid.regularization_axes]))

    products = np.array([reg_product(i) for i in eligible])
    chosen = int(eligible[int(np.argmax(products))])  # argmax takes first on ties
    rationale = (
        f"best score {best!r} ({direction}); {eligible.size} combination(s) within "
        f"{rel_tol:.0%}; picked largest regularization product {reg_product(chosen)!r}"
    )
    return TuneResult(
        grid=grid,
        combos=combos,
        scores=scores,
        errors=errors,
        selected_index=chosen,
        direction=direction,
        rationale=rationale,
    )
