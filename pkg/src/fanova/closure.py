"""Closed testing over interval hypotheses and pairwise group comparisons.

Intersection hypotheses are combined with the unweighted sum of the
interval statistics. Node p-values come from one shared null matrix, so a
node's p-value is the same whichever procedure asks for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .curves import FunctionalDataset
from .errors import ValidationError
from .permute import TIE_RTOL, NullStatMatrix, PermutationPlan
from .stats import Interval, interval_weights

__all__ = [
    "ClosureReport",
    "PairwiseReport",
    "NodeEvaluator",
    "full_closure",
    "shortcut_stat_ordered",
    "shortcut_p_ordered",
    "combined_shortcut",
    "close",
    "pairwise_followup",
    "set_partitions",
    "FULL_CLOSURE_CAP",
]

FULL_CLOSURE_CAP = 12
METHODS = ("full", "shortcut", "shortcut_p", "combined")


class NodeEvaluator:
    """Memoised p-values of intersection hypotheses, keyed by bitmask.

    ``nulls`` is either a (B, m) array / :class:`NullStatMatrix` of
    permutation statistics or a callable mapping a node statistic to its
    p-value. ``top_p`` replaces the p-value of the node containing every
    hypothesis. ``evaluations`` counts distinct nodes evaluated.
    """

    def __init__(self, observed, nulls, *, add_one: bool = True, top_p: float | None = None):
        if isinstance(nulls, NullStatMatrix):
            nulls = nulls.stats
        self.observed = np.asarray(observed, float)
        self.m = self.observed.size
        if self.m < 1:
            raise ValidationError("need at least one hypothesis")
        self.add_one = add_one
        self.top_p = top_p
        self.full_mask = (1 << self.m) - 1
        self._cache: dict[int, float] = {}
        if callable(nulls):
            self._p_map: Callable | None = nulls
            self._table = None
        else:
            table = np.asarray(nulls, float)
            if table.ndim != 2 or table.shape[1] != self.m:
                raise ValidationError(f"null matrix must be (B, {self.m})")
            self._p_map = None
            # row 0 observed; one code path for observed and null node sums
            self._table = np.vstack([self.observed, table])

    @property
    def evaluations(self) -> int:
        return len(self._cache)

    def indicator(self, mask: int) -> np.ndarray:
        return np.array([(mask >> i) & 1 for i in range(self.m)], dtype=float)

    def raw(self, mask: int) -> float:
        """Node p-value before any top-node override."""
        if self._p_map is not None:
            return float(self._p_map(float(self.observed @ self.indicator(mask))))
        sums = self._table @ self.indicator(mask)
        obs, null = sums[0], sums[1:]
        count = int(np.count_nonzero(null >= obs - TIE_RTOL * abs(obs)))
        if self.add_one:
            return (count + 1) / (null.size + 1)
        return count / null.size

    def p(self, mask: int) -> float:
        if mask not in self._cache:
            if mask == self.full_mask and self.top_p is not None:
                self._cache[mask] = float(self.top_p)
            else:
                self._cache[mask] = self.raw(mask)
        return self._cache[mask]


def _members(mask: int) -> tuple[int, ...]:
    return tuple(i for i in range(mask.bit_length()) if (mask >> i) & 1)


@dataclass
class ClosureReport:
    names: tuple[str, ...]
    raw_p: np.ndarray
    adjusted_p: np.ndarray
    achieving_node: list[tuple[int, ...]]
    method: str
    n_evaluations: int
    node_p: dict[tuple[int, ...], float] = field(default_factory=dict)

    def rejected(self, alpha: float) -> np.ndarray:
        return self.adjusted_p <= alpha

    def to_dict(self, alpha: float | None = None) -> dict:
        out = []
        for i, name in enumerate(self.names):
            entry = {
                "name": name,
                "raw_p": float(self.raw_p[i]),
                "adjusted_p": float(self.adjusted_p[i]),
                "achieving_node": [self.names[j] for j in self.achieving_node[i]],
            }
            if alpha is not None:
                entry["rejected_at_alpha"] = bool(self.adjusted_p[i] <= alpha)
            out.append(entry)
        return {"method": self.method, "node_evaluations": self.n_evaluations, "hypotheses": out}


def _names(names, m):
    return tuple(names) if names else tuple(f"H{i + 1}" for i in range(m))


def _report(ev: NodeEvaluator, adjusted, achieving, method, names, evaluations=None) -> ClosureReport:
    raw = np.array([ev.p(1 << i) for i in range(ev.m)])
    return ClosureReport(
        names=_names(names, ev.m),
        raw_p=raw,
        adjusted_p=np.asarray(adjusted, float),
        achieving_node=[_members(a) for a in achieving],
        method=method,
        n_evaluations=ev.evaluations if evaluations is None else evaluations,
        node_p={_members(k): v for k, v in sorted(ev._cache.items())},
    )


def full_closure(observed, nulls, *, top_p=None, add_one=True, names=(),
                 cap: int = FULL_CLOSURE_CAP) -> ClosureReport:
    """Adjusted p_i = max of p_S over every intersection S containing i."""
    m = np.size(observed)
    if m > cap:
        raise ValidationError(
            f"full closure over m={m} intervals needs {2 ** m - 1} nodes (cap {cap}); use the shortcut"
        )
    ev = NodeEvaluator(observed, nulls, add_one=add_one, top_p=top_p)
    adjusted = np.zeros(m)
    achieving = [0] * m
    for mask in range(1, ev.full_mask + 1):
        p = ev.p(mask)
        for i in _members(mask):
            # ties keep the smallest node found first
            if p > adjusted[i]:
                adjusted[i], achieving[i] = p, mask
    return _report(ev, adjusted, achieving, "full", names)


def _chain_pass(ev: NodeEvaluator, order: Sequence[int]):
    """Sum-statistic shortcut for a given weakest-to-strongest ordering.

    For the hypothesis at rank r the chain is {o_r} joined with the r
    weakest hypotheses one at a time, ending in {o_0..o_r}; the larger
    sets {o_0..o_s}, s > r, come from the chains of stronger ranks.
    """
    m = ev.m
    prefix = [0] * m
    acc = 0
    for r, i in enumerate(order):
        acc |= 1 << i
        prefix[r] = acc
    adjusted = np.zeros(m)
    achieving = [0] * m
    # strongest first so prefix nodes of larger size are already known
    for r in range(m - 1, -1, -1):
        h = order[r]
        best, where = -1.0, 0
        node = 1 << h
        candidates = [node]
        for j in range(r):
            node |= 1 << order[j]
            candidates.append(node)
        candidates.extend(prefix[s] for s in range(r + 1, m))
        for mask in candidates:
            p = ev.p(mask)
            if p > best:
                best, where = p, mask
        adjusted[h], achieving[h] = best, where
    return adjusted, achieving


def _stat_order(observed):
    return [int(i) for i in np.argsort(np.asarray(observed, float), kind="stable")]


def _p_order(ev: NodeEvaluator):
    raw = np.array([ev.p(1 << i) for i in range(ev.m)])
    # largest unadjusted p first, index order among ties
    return [int(i) for i in np.argsort(-raw, kind="stable")]


def shortcut_stat_ordered(observed, nulls, *, top_p=None, add_one=True, names=()) -> ClosureReport:
    """Shortcut with hypotheses ordered by increasing statistic; m(m+1)/2 nodes."""
    ev = NodeEvaluator(observed, nulls, add_one=add_one, top_p=top_p)
    adjusted, achieving = _chain_pass(ev, _stat_order(ev.observed))
    return _report(ev, adjusted, achieving, "shortcut_stat", names)


def shortcut_p_ordered(observed, nulls, *, top_p=None, add_one=True, names=()) -> ClosureReport:
    """Shortcut with hypotheses ordered by decreasing unadjusted p-value."""
    ev = NodeEvaluator(observed, nulls, add_one=add_one, top_p=top_p)
    adjusted, achieving = _chain_pass(ev, _p_order(ev))
    return _report(ev, adjusted, achieving, "shortcut_p", names)


def combined_shortcut(observed, nulls, *, top_p=None, add_one=True, names=()) -> ClosureReport:
    """Elementwise max of the statistic-ordered and p-ordered shortcuts."""
    ev = NodeEvaluator(observed, nulls, add_one=add_one, top_p=top_p)
    p1, a1 = _chain_pass(ev, _stat_order(ev.observed))
    p2, a2 = _chain_pass(ev, _p_order(ev))
    take2 = p2 > p1
    adjusted = np.where(take2, p2, p1)
    achieving = [b if t else a for a, b, t in zip(a1, a2, take2)]
    return _report(ev, adjusted, achieving, "combined", names)


def close(observed, nulls, method: str = "combined", **kwargs) -> ClosureReport:
    """Dispatch on ``method``: full, shortcut, shortcut_p or combined."""
    funcs = {
        "full": full_closure,
        "shortcut": shortcut_stat_ordered,
        "shortcut_p": shortcut_p_ordered,
        "combined": combined_shortcut,
    }
    if method not in funcs:
        raise ValidationError(f"unknown closure method {method!r}; choose from {sorted(funcs)}")
    return funcs[method](observed, nulls, **kwargs)


# ---------------------------------------------------------------------------
# pairwise level

def set_partitions(items: Sequence) -> list[list[tuple]]:
    """All set partitions of ``items`` (Bell-number many), classes in first-element order."""
    items = list(items)
    if not items:
        return [[]]
    first, rest = items[0], items[1:]
    out = []
    for part in set_partitions(rest):
        out.append([(first,)] + part)
        for c in range(len(part)):
            out.append(part[:c] + [(first,) + part[c]] + part[c + 1:])
    return [sorted(p) for p in out]


def _partition_label(part, names) -> str:
    return " | ".join(",".join(names[g] for g in cls) for cls in part)


@dataclass
class PairwiseReport:
    interval: str
    group_names: tuple[str, ...]
    pairs: list[tuple[int, int]]
    raw_p: np.ndarray
    adjusted_p: np.ndarray
    achieving_node: list[str]
    top_p: float
    top_raw_p: float
    node_p: dict[str, float]

    @property
    def pair_names(self) -> list[str]:
        return [f"{self.group_names[a]}-{self.group_names[b]}" for a, b in self.pairs]

    def rejected(self, alpha: float) -> np.ndarray:
        return self.adjusted_p <= alpha

    def to_dict(self, alpha: float | None = None) -> dict:
        hyps = []
        for i, name in enumerate(self.pair_names):
            entry = {
                "name": name,
                "raw_p": float(self.raw_p[i]),
                "adjusted_p": float(self.adjusted_p[i]),
                "achieving_node": self.achieving_node[i],
            }
            if alpha is not None:
                entry["rejected_at_alpha"] = bool(self.adjusted_p[i] <= alpha)
            hyps.append(entry)
        return {
            "interval": self.interval,
            "top_node_p": self.top_p,
            "top_node_raw_p": self.top_raw_p,
            "nodes": len(self.node_p),
            "hypotheses": hyps,
        }


def pairwise_followup(ds: FunctionalDataset, interval: Interval, interval_adjusted_p: float,
                      plan: PermutationPlan, *, add_one: bool = True, backend=None) -> PairwiseReport:
    """Closed pairwise comparisons of group means within one interval.

    Each closure node is a partition of the groups into equality classes;
    its statistic is the sum over classes with two or more groups of the
    between-group statistic of those groups alone. All node p-values use
    the global relabellings of ``plan``. The all-groups node takes
    ``interval_adjusted_p`` as its p-value.
    """
    if not 0 < interval_adjusted_p <= 1:
        raise ValidationError("interval adjusted p-value must lie in (0, 1]")
    if not isinstance(interval, Interval):
        raise ValidationError("interval must come from the analysis partition")
    if plan.n != ds.n:
        raise ValidationError(f"plan has {plan.n} labels but the dataset has {ds.n} curves")
    k = ds.k
    sl = slice(interval.start, interval.stop + 1)
    w = interval_weights(ds.grid, interval)[sl]
    sizes = ds.group_sizes.astype(float)
    rows = np.vstack([ds.labels[None, :], plan.labels])
    means = _kernels.permuted_group_means(ds.values[:, sl], rows, sizes, backend=backend)

    class_stat: dict[tuple, np.ndarray] = {}

    def stat_of(cls):
        if cls not in class_stat:
            idx = list(cls)
            nc = sizes[idx]
            sub = means[:, idx, :]
            pooled = np.einsum("j,bjg->bg", nc, sub) / nc.sum()
            dev = sub - pooled[:, None, :]
            between = np.einsum("j,bjg->bg", nc, dev * dev)
            class_stat[cls] = between @ w / (len(idx) - 1)
        return class_stat[cls]

    def p_of(stat):
        obs, null = stat[0], stat[1:]
        count = int(np.count_nonzero(null >= obs - TIE_RTOL * abs(obs)))
        return (count + 1) / (null.size + 1) if add_one else count / null.size

    top = tuple(range(k))
    nodes = []
    for part in set_partitions(range(k)):
        merged = [c for c in part if len(c) >= 2]
        if not merged:
            continue
        total = np.zeros(rows.shape[0])
        for cls in merged:
            total = total + stat_of(cls)
        raw = p_of(total)
        p = float(interval_adjusted_p) if merged == [top] else raw
        nodes.append((part, raw, p))

    pairs = list(combinations(range(k), 2))
    raw_p, adj_p, achieving = [], [], []
    top_raw = next(raw for part, raw, _ in nodes if part == [top])
    for a, b in pairs:
        where, pair_raw = next((part, raw) for part, raw, _ in nodes if len(part) == k - 1 and (a, b) in part)
        best = pair_raw
        for part, _, p in nodes:
            if p > best and any(a in c and b in c for c in part):
                best, where = p, part
        raw_p.append(pair_raw)
        adj_p.append(best)
        achieving.append(_partition_label(where, ds.group_names))
    return PairwiseReport(
        interval=interval.name,
        group_names=ds.group_names,
        pairs=pairs,
        raw_p=np.array(raw_p),
        adjusted_p=np.array(adj_p),
        achieving_node=achieving,
        top_p=float(interval_adjusted_p),
        top_raw_p=float(top_raw),
        node_p={_partition_label(part, ds.group_names): p for part, _, p in nodes},
    )
