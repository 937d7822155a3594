"""Shipped hyper-parameter grids and tuned defaults.

These are the coarse/fine search grids and the final tuned values from
the original 18-ETF study (2006-2014 model period).  They are presets,
not magic: any grid can be supplied through the run configuration.
"""

from __future__ import annotations

from .tuner import Grid, log_spaced

ETF_UNIVERSE = (
    "AGG", "DBC", "GLD", "IBB", "ITA", "PBJ", "TLT", "VNQ", "VTI",
    "XLB", "XLE", "XLF", "XLI", "XLK", "XLP", "XLU", "XLV", "XLY",
)
DEFAULT_BENCHMARK = "VTI"

RETURN_COARSE_GRID = Grid(
    axes={
        "loc": (0.001, 0.01, 0.1),
        "vol": (1.0, 10.0, 100.0, 1000.0, 10000.0),
        "inf": (1.0, 10.0, 100.0, 1000.0, 10000.0),
        "mort": (1.0, 10.0, 100.0, 1000.0, 10000.0),
    },
    stage="coarse",
)

RETURN_FINE_GRID = Grid(
    axes={
        "loc": (0.0075, 0.01, 0.0125),
        "vol": (2.0, 5.0, 10.0, 20.0, 50.0),
        "inf": (2.0, 5.0, 10.0, 20.0, 50.0),
        "mort": (200.0, 500.0, 1000.0, 2000.0, 5000.0),
    },
    stage="fine",
)

RISK_COARSE_GRID = Grid(
    axes={
        "vol": (0.1, 1.0, 10.0, 100.0, 1000.0),
        "inf": (0.1, 1.0, 10.0, 100.0, 1000.0),
        "mort": (0.1, 1.0, 10.0, 100.0, 1000.0),
    },
    stage="coarse",
)

RISK_FINE_GRID = Grid(
    axes={
        "vol": (0.2, 0.5, 1.0, 2.0, 5.0),
        "inf": (0.2, 0.5, 1.0, 2.0, 5.0),
        "mort": (20.0, 50.0, 100.0, 200.0, 500.0),
    },
    stage="fine",
)

# 25 log-spaced values of each trading-aversion knob, 625 pairs in all
POLICY_GRID = Grid(
    axes={
        "gamma_sc": log_spaced(25, 0.1, 10.0),
        "gamma_tc": log_spaced(25, 0.1, 10.0),
    },
    stage="coarse",
)

# final tuned hyper-parameters from the 18-ETF study
TUNED_RETURN_HYPERS = {"loc": 0.0075, "vol": 10.0, "inf": 50.0, "mort": 5000.0}
TUNED_RISK_HYPERS = {"vol": 0.2, "inf": 5.0, "mort": 20.0}
TUNED_POLICY_GAMMAS = {"stratified": (2.61, 2.15), "common": (0.12, 1.47)}
