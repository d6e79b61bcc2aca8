"""Interval-restricted FANOVA statistics computed by trapezoid quadrature.

All statistics work on grid evaluations of the (already smoothed) curves
held by a :class:`~fanova.curves.FunctionalDataset`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .curves import FunctionalDataset, group_means
from .errors import DegenerateStatisticError, ValidationError

__all__ = [
    "Interval",
    "IntervalPartition",
    "IntervalStat",
    "integrate",
    "interval_weights",
    "between_ss",
    "within_ss",
    "interval_T",
    "interval_stats",
    "functional_F",
    "vn_stat",
    "combine_sum",
]


class Interval(NamedTuple):
    """Closed interval ``grid[start] .. grid[stop]`` (grid indices, inclusive)."""

    name: str
    start: int
    stop: int


@dataclass(frozen=True, eq=False)
class IntervalPartition:
    """Contiguous intervals covering the whole grid.

    ``edges`` holds m + 1 strictly increasing grid indices from 0 to G - 1.
    Neighbouring intervals share their boundary grid point; quadrature
    segments are never shared, so statistics add up across intervals.
    """

    grid: np.ndarray
    edges: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        grid = np.asarray(self.grid, float)
        edges = np.asarray(self.edges, dtype=np.int64)
        if edges.ndim != 1 or len(edges) < 2:
            raise ValidationError("a partition needs at least one interval")
        if edges[0] != 0 or edges[-1] != len(grid) - 1:
            raise ValidationError("intervals must cover the whole grid")
        if np.any(np.diff(edges) < 1):
            raise ValidationError("every interval must contain at least 2 grid points")
        if len(self.names) != len(edges) - 1:
            raise ValidationError("one name per interval required")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def equal(cls, grid, m: int) -> "IntervalPartition":
        """``m`` intervals of (near) equal index length."""
        grid = np.asarray(grid, float)
        edges = np.round(np.linspace(0, len(grid) - 1, m + 1)).astype(np.int64)
        return cls(grid, edges, tuple(f"I{i + 1}" for i in range(m)))

    @classmethod
    def from_bounds(cls, grid, bounds: Sequence, warn: bool = True) -> "IntervalPartition":
        """Snap intervals given in data units to the nearest grid points.

        ``bounds`` is a sequence of ``(name, a, b)`` or dicts with keys
        ``name``, ``a``, ``b``; ``b`` may be ``None`` for "to the end".
        Snapping by more than one grid step triggers a warning.
        """
        grid = np.asarray(grid, float)
        step = float(np.max(np.diff(grid)))
        names, starts, stops = [], [], []
        for item in bounds:
            if isinstance(item, dict):
                name, a, b = item["name"], item.get("a"), item.get("b")
            else:
                name, a, b = item
            a = grid[0] if a is None else float(a)
            b = grid[-1] if b is None else float(b)
            ia, ib = (int(np.argmin(np.abs(grid - v))) for v in (a, b))
            for v, idx in ((a, ia), (b, ib)):
                if warn and abs(grid[idx] - v) > step:
                    warnings.warn(f"interval {name!r}: boundary {v:g} snapped to grid point {grid[idx]:g}")
            names.append(str(name))
            starts.append(ia)
            stops.append(ib)
        if starts[0] != 0 or stops[-1] != len(grid) - 1:
            raise ValidationError(
                f"intervals cover [{grid[starts[0]]:g}, {grid[stops[-1]]:g}] but the data domain is "
                f"[{grid[0]:g}, {grid[-1]:g}]"
            )
        for i in range(1, len(starts)):
            if starts[i] != stops[i - 1]:
                raise ValidationError(
                    f"intervals {names[i - 1]!r} and {names[i]!r} are not contiguous after snapping to the grid"
                )
        return cls(grid, np.array(starts + [stops[-1]]), tuple(names))

    @property
    def m(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return self.m

    def __iter__(self):
        return iter(self.intervals)

    def __getitem__(self, i) -> Interval:
        return self.intervals[i]

    @property
    def intervals(self) -> list[Interval]:
        return [Interval(n, int(a), int(b)) for n, a, b in zip(self.names, self.edges[:-1], self.edges[1:])]

    def bounds(self) -> list[tuple[float, float]]:
        return [(float(self.grid[iv.start]), float(self.grid[iv.stop])) for iv in self.intervals]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"no interval named {name!r}") from None

    def weights(self) -> np.ndarray:
        """(G, m) trapezoid weights; column i integrates over interval i."""
        return np.column_stack([interval_weights(self.grid, iv) for iv in self.intervals])


@dataclass(frozen=True)
class IntervalStat:
    index: int
    T: float
    df_num: int
    F: float | None = None
    Vn: float | None = None


def _resolve(grid, interval) -> Interval:
    if interval is None:
        return Interval("all", 0, len(grid) - 1)
    if isinstance(interval, Interval):
        return interval
    a, b = (float(v) for v in interval)
    ia = np.flatnonzero(np.isclose(grid, a, rtol=0, atol=1e-9 * (grid[-1] - grid[0])))
    ib = np.flatnonzero(np.isclose(grid, b, rtol=0, atol=1e-9 * (grid[-1] - grid[0])))
    if not (ia.size and ib.size):
        raise ValidationError(f"interval endpoints {a:g}, {b:g} must be grid points")
    return Interval(f"[{a:g},{b:g}]", int(ia[0]), int(ib[0]))


def interval_weights(grid, interval=None) -> np.ndarray:
    """Trapezoid weights over the grid points of ``interval`` (zero elsewhere)."""
    grid = np.asarray(grid, float)
    iv = _resolve(grid, interval)
    if iv.stop - iv.start < 1:
        raise ValidationError("interval contains fewer than 2 grid points")
    w = np.zeros(len(grid))
    h = np.diff(grid[iv.start:iv.stop + 1])
    w[iv.start:iv.stop] += h / 2
    w[iv.start + 1:iv.stop + 1] += h / 2
    return w


def integrate(values, grid, interval=None) -> float:
    """Trapezoid rule over the grid points lying in ``interval``."""
    grid = np.asarray(grid, float)
    iv = _resolve(grid, interval)
    if iv.stop - iv.start < 1:
        raise ValidationError("interval contains fewer than 2 grid points")
    sl = slice(iv.start, iv.stop + 1)
    return float(trapezoid(np.asarray(values, float)[..., sl], grid[sl]))


def between_ss(ds: FunctionalDataset) -> np.ndarray:
    """Pointwise sum_j n_j (mean_j(t) - mean(t))^2."""
    means, grand = group_means(ds)
    return ds.group_sizes @ (means - grand) ** 2


def within_ss(ds: FunctionalDataset) -> np.ndarray:
    """Pointwise sum over curves of (y_s(t) - mean of its group(t))^2."""
    means, _ = group_means(ds)
    resid = ds.values - means[ds.labels]
    return np.sum(resid * resid, axis=0)


def interval_T(ds: FunctionalDataset, interval=None) -> float:
    """Integrated between-group sum of squares over ``interval`` divided by k - 1."""
    return integrate(between_ss(ds), ds.grid, interval) / (ds.k - 1)


def interval_stats(ds: FunctionalDataset, partition: IntervalPartition) -> np.ndarray:
    """Vector of ``interval_T`` over every interval of ``partition``."""
    return between_ss(ds) @ partition.weights() / (ds.k - 1)


def functional_F(ds: FunctionalDataset, interval=None) -> float:
    """Ratio of the between-group and within-group integrated mean squares."""
    if ds.n <= ds.k:
        raise ValidationError("functional F needs more curves than groups")
    denom = integrate(within_ss(ds), ds.grid, interval) / (ds.n - ds.k)
    if not denom > 0:
        raise DegenerateStatisticError("within-group variability is zero on this interval")
    return interval_T(ds, interval) / denom


def vn_stat(ds: FunctionalDataset, interval=None) -> float:
    """sum_{i<j} n_i ||mean_i - mean_j||^2 with the L2 norm taken over ``interval``."""
    means, _ = group_means(ds)
    sizes = ds.group_sizes
    w = interval_weights(ds.grid, interval)
    total = 0.0
    for i in range(ds.k):
        for j in range(i + 1, ds.k):
            d = means[i] - means[j]
            total += sizes[i] * float(w @ (d * d))
    return total


def combine_sum(stats, subset=None) -> float:
    """Unweighted sum-combining function over the intervals in ``subset``."""
    stats = np.asarray(stats, float)
    if subset is None:
        return float(stats.sum())
    subset = list(subset)
    if not subset:
        raise ValidationError("subset must be nonempty")
    return float(stats[subset].sum())
