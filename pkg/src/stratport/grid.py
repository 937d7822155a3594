"""Market-condition grid: quantile bins, condition codes, and the strata graph.

Raw market indicators are discretized into per-indicator quantile bins
(deciles by default).  A market condition is the tuple of bin labels, one
per indicator, encoded either as a tuple or as a single 1-based flat index
(first indicator most significant).  Conditions are related through the
Cartesian product of chain graphs: two conditions are neighbors when they
differ by one bin in exactly one indicator, and every edge carries the tag
of the indicator it steps along, so each indicator gets its own coupling
weight.

All types here are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from .exceptions import DegenerateBinsError, InputError

DEFAULT_INDICATORS = ("vol", "inf", "mort")
DEFAULT_DIMS = (10, 10, 10)


def flat_index(coords: Sequence[int], dims: Sequence[int] = DEFAULT_DIMS) -> int:
    """Encode a 1-based coordinate tuple as a 1-based flat index.

    The first coordinate is the most significant: on the default
    10x10x10 grid ``(d1, d2, d3)`` maps to ``(d1-1)*100 + (d2-1)*10 + d3``.
    """
    if len(coords) != len(dims):
        raise InputError(f"expected {len(dims)} coordinates, got {len(coords)}")
    idx = 0
    for c, d in zip(coords, dims):
        if not 1 <= c <= d:
            raise InputError(f"coordinate {c} outside 1..{d}")
        idx = idx * d + (c - 1)
    return idx + 1


def coords_from_flat(index: int, dims: Sequence[int] = DEFAULT_DIMS) -> tuple[int, ...]:
    """Inverse of :func:`flat_index`."""
    total = int(np.prod(dims))
    if not 1 <= index <= total:
        raise InputError(f"flat index {index} outside 1..{total}")
    rem = index - 1
    coords = []
    for d in reversed(dims):
        coords.append(rem % d + 1)
        rem //= d
    return tuple(reversed(coords))


@dataclass(frozen=True)
class MarketCondition:
    """A point on the condition grid: 1-based bin per indicator.

    ``coords`` and the derived ``flat`` index are consistent by
    construction; round-tripping through either representation is the
    identity.
    """

    coords: tuple[int, ...]
    dims: tuple[int, ...] = DEFAULT_DIMS

    def __post_init__(self) -> None:
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        flat_index(self.coords, self.dims)  # validates ranges

    @property
    def flat(self) -> int:
        return flat_index(self.coords, self.dims)

    @classmethod
    def from_flat(cls, index: int, dims: Sequence[int] = DEFAULT_DIMS) -> "MarketCondition":
        return cls(coords_from_flat(index, dims), tuple(dims))


@dataclass(frozen=True)
class QuantileBins:
    """Per-indicator quantile boundaries fit on a declared date range.

    ``boundaries[i]`` holds ``n_bins[i] - 1`` strictly increasing break
    points for indicator ``indicators[i]`` (9 per indicator for the
    default decile grid), computed only from data inside
    ``[fit_start, fit_end]``.
    """

    indicators: tuple[str, ...]
    boundaries: tuple[tuple[float, ...], ...]
    fit_start: str
    fit_end: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "indicators", tuple(self.indicators))
        object.__setattr__(
            self, "boundaries", tuple(tuple(float(b) for b in bs) for bs in self.boundaries)
        )
        if len(self.indicators) != len(self.boundaries):
            raise InputError("one boundary list per indicator required")
        for name, bs in zip(self.indicators, self.boundaries):
            if len(bs) < 1:
                raise InputError(f"indicator {name!r}: at least one boundary required")
            if any(not np.isfinite(b) for b in bs):
                raise InputError(f"indicator {name!r}: non-finite boundary")
            if any(b2 <= b1 for b1, b2 in zip(bs, bs[1:])):
                raise InputError(f"indicator {name!r}: boundaries not strictly increasing")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(len(bs) + 1 for bs in self.boundaries)

    def to_dict(self) -> dict:
        return {
            "indicators": list(self.indicators),
            "boundaries": [list(bs) for bs in self.boundaries],
            "fit_start": self.fit_start,
            "fit_end": self.fit_end,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "QuantileBins":
        return cls(
            indicators=tuple(d["indicators"]),
            boundaries=tuple(tuple(bs) for bs in d["boundaries"]),
            fit_start=str(d["fit_start"]),
            fit_end=str(d["fit_end"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "QuantileBins":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def compute_quantile_bins(
    indicators: pd.DataFrame,
    fit_range: tuple,
    n_bins: int = 10,
) -> QuantileBins:
    """Compute per-indicator quantile boundaries from the fit range only.

    Boundaries are the ``1/n_bins, 2/n_bins, ...`` empirical quantiles
    (linear interpolation between order statistics) of each column of
    ``indicators`` restricted to ``fit_range``.  With the default
    ``n_bins=10`` this yields the nine decile boundaries.

    Raises
    ------
    DegenerateBinsError
        If a column has fewer than ``n_bins`` distinct values on the fit
        range (the boundaries would not be strictly increasing).
    """
    if n_bins < 2:
        raise InputError("n_bins must be at least 2")
    start, end = pd.Timestamp(fit_range[0]), pd.Timestamp(fit_range[1])
    window = indicators.loc[(indicators.index >= start) & (indicators.index <= end)]
    if window.empty:
        raise InputError("no indicator data inside the fit range")
    qs = np.arange(1, n_bins) / n_bins
    bounds = []
    for col in indicators.columns:
        vals = window[col].to_numpy(dtype=float)
        if not np.all(np.isfinite(vals)):
            raise InputError(f"indicator {col!r} has non-finite values in the fit range")
        if np.unique(vals).size < n_bins:
            raise DegenerateBinsError(
                f"indicator {col!r}: fewer than {n_bins} distinct values in the fit range"
            )
        b = np.quantile(vals, qs, method="linear")
        if np.any(np.diff(b) <= 0):
            raise DegenerateBinsError(f"indicator {col!r}: quantile boundaries are not distinct")
        bounds.append(tuple(float(x) for x in b))
    return QuantileBins(
        indicators=tuple(str(c) for c in indicators.columns),
        boundaries=tuple(bounds),
        fit_start=str(start.date()),
        fit_end=str(end.date()),
    )


def assign_condition(values: Sequence[float], bins: QuantileBins) -> MarketCondition:
    """Map raw indicator values onto the bin grid.

    Per indicator, the bin label is one plus the number of boundaries
    strictly below the value; a value exactly on a boundary belongs to the
    bin below it, and values beyond either end clamp to bins 1 or n (so
    unseen extremes in the test period are still covered).
    """
    if len(values) != len(bins.indicators):
        raise InputError(f"expected {len(bins.indicators)} values, got {len(values)}")
    coords = []
    for v, bs in zip(values, bins.boundaries):
        v = float(v)
        if not np.isfinite(v):
            raise InputError("non-finite indicator value")
        coords.append(int(np.searchsorted(np.asarray(bs), v, side="left")) + 1)
    return MarketCondition(tuple(coords), bins.dims)


def assign_conditions(indicators: pd.DataFrame, bins: QuantileBins) -> pd.Series:
    """Vectorized :func:`assign_condition`: one 1-based flat index per row."""
    missing = [c for c in bins.indicators if c not in indicators.columns]
    if missing:
        raise InputError(f"indicator columns missing: {missing}")
    vals = indicators[list(bins.indicators)].to_numpy(dtype=float)
    if not np.all(np.isfinite(vals)):
        raise InputError("non-finite indicator value")
    flat = np.zeros(len(indicators), dtype=np.int64)
    for a, (bs, d) in enumerate(zip(bins.boundaries, bins.dims)):
        labels = np.searchsorted(np.asarray(bs), vals[:, a], side="left")  # 0-based
        flat = flat * d + labels
    return pd.Series(flat + 1, index=indicators.index, name="condition")


@dataclass(frozen=True)
class RegularizationGraph:
    """Weighted graph over the condition grid.

    Nodes are the 0-based flat condition codes (flat index minus one).
    Each undirected edge links two grid points that differ by one step in
    exactly one axis and carries that axis' group tag, so a weight can be
    assigned per indicator.  The default 10x10x10 grid has 1000 nodes and
    2700 edges.
    """

    dims: tuple[int, ...]
    groups: tuple[str, ...]
    edges: np.ndarray  # (E, 2) int64, u < v, 0-based node ids
    edge_axes: np.ndarray  # (E,) int64, axis of each edge

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "groups", tuple(self.groups))
        edges = np.ascontiguousarray(np.asarray(self.edges, dtype=np.int64))
        axes = np.ascontiguousarray(np.asarray(self.edge_axes, dtype=np.int64))
        if len(self.groups) != len(self.dims):
            raise InputError("one group tag per axis required")
        if edges.ndim != 2 or edges.shape[1] != 2 or axes.shape != (edges.shape[0],):
            raise InputError("edges must be (E,2) with matching edge_axes")
        if edges.size and (np.any(edges[:, 0] == edges[:, 1])):
            raise InputError("self loops are not allowed")
        edges.setflags(write=False)
        axes.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_axes", axes)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def edge_group(self, cond_a: Sequence[int], cond_b: Sequence[int]) -> str:
        """Group tag of the edge between two coordinate tuples."""
        u = flat_index(cond_a, self.dims) - 1
        v = flat_index(cond_b, self.dims) - 1
        lo, hi = min(u, v), max(u, v)
        hit = np.flatnonzero((self.edges[:, 0] == lo) & (self.edges[:, 1] == hi))
        if hit.size == 0:
            raise InputError(f"{tuple(cond_a)} and {tuple(cond_b)} are not adjacent")
        return self.groups[int(self.edge_axes[hit[0]])]

    def edge_weights(self, gammas: Mapping[str, float]) -> np.ndarray:
        """Per-edge weight vector under a group -> weight assignment."""
        gam = _gamma_vector(self.groups, gammas)
        return gam[self.edge_axes]

    def weight_matrix(self, gammas: Mapping[str, float]) -> sparse.csr_matrix:
        """Symmetric K x K weight matrix W with per-group edge weights."""
        w = self.edge_weights(gammas)
        u, v = self.edges[:, 0], self.edges[:, 1]
        K = self.num_nodes
        W = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(K, K),
        )
        return W.tocsr()

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "groups": list(self.groups),
            "edges": self.edges.tolist(),
            "edge_axes": self.edge_axes.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegularizationGraph":
        return cls(
            dims=tuple(d["dims"]),
            groups=tuple(d["groups"]),
            edges=np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2),
            edge_axes=np.asarray(d["edge_axes"], dtype=np.int64),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RegularizationGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_edge_list(self, path, gammas: Mapping[str, float]) -> None:
        """Export as text, one ``u v group weight`` line per edge (1-based ids)."""
        w = self.edge_weights(gammas)
        with open(path, "w") as fh:
            for (u, v), a, wt in zip(self.edges, self.edge_axes, w):
                fh.write(f"{u + 1} {v + 1} {self.groups[int(a)]} {float(wt)!r}\n")


def _gamma_vector(groups: Iterable[str], gammas: Mapping[str, float]) -> np.ndarray:
    out = []
    for g in groups:
        if g not in gammas:
            raise InputError(f"missing weight for edge group {g!r}")
        val = float(gammas[g])
        if not np.isfinite(val) or val < 0:
            raise InputError(f"edge group {g!r}: weight must be finite and nonnegative")
        out.append(val)
    return np.asarray(out)


def build_product_chain_graph(
    dims: Sequence[int],
    groups: Sequence[str] | None = None,
) -> RegularizationGraph:
    """Cartesian product of chain graphs, one chain per indicator axis.

    Grid points that differ by exactly one step along exactly one axis are
    linked, and the edge is tagged with that axis' group so it can later
    receive the group's weight.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) == 0:
        raise InputError("dims must be nonempty")
    if any(d < 1 for d in dims):
        raise InputError("every chain length must be >= 1")
    if groups is None:
        if len(dims) == len(DEFAULT_INDICATORS):
            groups = DEFAULT_INDICATORS
        else:
            groups = tuple(f"axis{a}" for a in range(len(dims)))
    groups = tuple(str(g) for g in groups)
    if len(set(groups)) != len(groups):
        raise InputError("group tags must be distinct")

    ids = np.arange(int(np.prod(dims))).reshape(dims)
    edge_blocks, axis_blocks = [], []
    for a, d in enumerate(dims):
        if d < 2:
            continue
        lo = [slice(None)] * len(dims)
        hi = [slice(None)] * len(dims)
        lo[a] = slice(0, d - 1)
        hi[a] = slice(1, d)
        u = ids[tuple(lo)].ravel()
        v = ids[tuple(hi)].ravel()
        edge_blocks.append(np.column_stack([u, v]))
        axis_blocks.append(np.full(u.size, a, dtype=np.int64))
    if edge_blocks:
        edges = np.concatenate(edge_blocks, axis=0)
        axes = np.concatenate(axis_blocks)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
        axes = np.zeros(0, dtype=np.int64)
    return RegularizationGraph(dims=dims, groups=groups, edges=edges, edge_axes=axes)


def weighted_laplacian(
    graph: RegularizationGraph, gammas: Mapping[str, float]
) -> sparse.csr_matrix:
    """Graph Laplacian L = diag(W 1) - W with per-group edge weights.

    L is symmetric positive semidefinite and annihilates the constant
    vector exactly: each row stores its diagonal last, with the degree
    accumulated in the same order a row-wise matvec traverses the
    off-diagonal entries, so the cancellation is exact in floating point.
    """
    W = graph.weight_matrix(gammas)
    W.sort_indices()
    K = graph.num_nodes
    data, indices, indptr = [], [], [0]
    for i in range(K):
        lo, hi = W.indptr[i], W.indptr[i + 1]
        row = W.data[lo:hi]
        deg = 0.0
        for x in row:
            deg += float(x)
        data.extend(-row)
        indices.extend(W.indices[lo:hi])
        data.append(deg)
        indices.append(i)
        indptr.append(len(data))
    L = sparse.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(K, K),
    )
    return L
