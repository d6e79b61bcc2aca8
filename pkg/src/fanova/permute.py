"""Reproducible label permutations and the shared null statistic matrix."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .curves import FunctionalDataset
from .errors import ValidationError
from .stats import IntervalPartition

__all__ = [
    "PermutationPlan",
    "NullStatMatrix",
    "generate_plan",
    "exhaustive_plan",
    "null_matrix",
    "p_value",
    "TIE_RTOL",
]

# Statistics equal up to this relative tolerance count as ties. Relabellings
# that only swap group identities give the same value up to rounding.
TIE_RTOL = 1e-10


def _codes(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype.kind in "iu":
        return labels.astype(np.int64)
    _, codes = np.unique(labels, return_inverse=True)
    return codes.astype(np.int64)


@dataclass(frozen=True, eq=False)
class PermutationPlan:
    """B relabellings of the observed label vector, one per row."""

    seed: int | None
    base: np.ndarray
    labels: np.ndarray

    @property
    def B(self) -> int:
        return self.labels.shape[0]

    @property
    def n(self) -> int:
        return self.labels.shape[1]


def generate_plan(seed: int, B: int, labels, include_identity: bool = False) -> PermutationPlan:
    """Draw B uniform relabellings by shuffling curve indices.

    Each row is ``labels[perm]`` with ``perm`` from the Fisher-Yates
    shuffle of a PCG64 generator seeded with ``seed``; the plan is a pure
    function of ``(seed, B, labels)``. With ``include_identity`` row 0 is
    the observed labelling.
    """
    if B < 1:
        raise ValidationError("number of permutations must be at least 1")
    base = _codes(labels)
    if len(np.unique(base)) < 2:
        raise ValidationError("permutation needs at least 2 distinct groups")
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = np.empty((B, base.size), dtype=np.int64)
    start = 0
    if include_identity:
        rows[0] = base
        start = 1
    for b in range(start, B):
        rows[b] = base[rng.permutation(base.size)]
    return PermutationPlan(seed, base, rows)


def exhaustive_plan(labels) -> PermutationPlan:
    """Every distinct relabelling of ``labels`` (multinomial(n; n_1..n_k) rows).

    The observed labelling is always row 0.
    """
    base = _codes(labels)
    n = base.size
    groups, sizes = np.unique(base, return_counts=True)

    def assign(free, g):
        if g == len(groups) - 1:
            yield {groups[g]: free}
            return
        for chosen in itertools.combinations(free, sizes[g]):
            rest = tuple(i for i in free if i not in chosen)
            for tail in assign(rest, g + 1):
                yield {groups[g]: chosen, **tail}

    rows = []
    for mapping in assign(tuple(range(n)), 0):
        row = np.empty(n, dtype=np.int64)
        for grp, idx in mapping.items():
            row[list(idx)] = grp
        rows.append(row)
    rows = np.array(rows)
    first = np.flatnonzero((rows == base).all(axis=1))[0]
    rows[[0, first]] = rows[[first, 0]]
    return PermutationPlan(None, base, rows)


@dataclass(frozen=True, eq=False)
class NullStatMatrix:
    """Interval statistics under the observed labels and every plan row.

    ``stats[b, i]`` is the statistic of interval i under relabelling b and
    ``observed[i]`` the statistic under the observed labels; both come
    from the same kernel so equal labellings give identical values.
    """

    stats: np.ndarray
    observed: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def B(self) -> int:
        return self.stats.shape[0]

    @property
    def m(self) -> int:
        return self.stats.shape[1]

    def p_values(self, add_one: bool = True) -> np.ndarray:
        return np.array([p_value(self.observed[i], self.stats[:, i], add_one) for i in range(self.m)])

    def to_csv(self, path) -> None:
        names = self.names or tuple(f"I{i + 1}" for i in range(self.m))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row"] + list(names))
            w.writerow(["observed"] + [repr(float(v)) for v in self.observed])
            for b, row in enumerate(self.stats):
                w.writerow([b + 1] + [repr(float(v)) for v in row])


def null_matrix(ds: FunctionalDataset, partition: IntervalPartition, plan: PermutationPlan,
                backend=None) -> NullStatMatrix:
    """Evaluate every interval statistic once per relabelling.

    Curves are not refitted: smoothing is per curve and label-free, so a
    relabelling only regroups the already evaluated curves.
    """
    if plan.n != ds.n:
        raise ValidationError(f"plan has {plan.n} labels but the dataset has {ds.n} curves")
    sizes = ds.group_sizes
    if not np.array_equal(np.bincount(plan.labels[0], minlength=ds.k), sizes):
        raise ValidationError("plan rows do not match the dataset's group sizes")
    W = partition.weights()
    rows = np.vstack([ds.labels[None, :], plan.labels])
    allstats = _kernels.permuted_interval_stats(ds.values, rows, sizes, W, backend=backend)
    return NullStatMatrix(allstats[1:], allstats[0], tuple(partition.names))


def p_value(observed, null, add_one: bool = True) -> float:
    """Permutation p-value, counting ties as at least as extreme.

    With ``add_one`` this is ``(1 + #{null >= observed}) / (B + 1)``;
    otherwise the raw proportion ``#{null >= observed} / B``.
    """
    null = np.asarray(null, float)
    if null.size < 1:
        raise ValidationError("need at least one permutation statistic")
    observed = float(observed)
    count = int(np.count_nonzero(null >= observed - TIE_RTOL * abs(observed)))
    if add_one:
        return (count + 1) / (null.size + 1)
    return count / null.size
