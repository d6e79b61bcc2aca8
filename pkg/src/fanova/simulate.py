"""Synthetic functional data and the Monte Carlo power study."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .closure import close, pairwise_followup
from .curves import FunctionalDataset, RawCurve, smooth_dataset, write_curves_csv
from .errors import ValidationError
from .permute import generate_plan, null_matrix
from .stats import IntervalPartition

__all__ = [
    "STUDY_BETAS",
    "SimConfig",
    "PowerRow",
    "PowerTable",
    "mean_function",
    "gen_dataset",
    "run_replicate",
    "run_power",
    "gen_demo_erythrograms",
    "DEMO_INTERVALS",
]

STUDY_BETAS = (0.000, 0.045, 0.091, 0.136, 0.182, 0.227, 0.273, 0.318, 0.364, 0.409, 0.455, 0.500)
GROUPS = ("A", "B", "C")


@dataclass(frozen=True)
class SimConfig:
    model: str = "M2"
    beta: float = 0.0
    k: int = 3
    n_per_group: int = 5
    n_points: int = 101
    noise_var: float = 0.3
    m: int = 5
    nsim: int = 200
    B: int = 200
    seed: int = 42
    alpha: float = 0.05
    method: str = "combined"
    pairwise: bool = True
    smoothing: str = "interpolate"

    def __post_init__(self):
        if self.model not in ("M1", "M2"):
            raise ValidationError(f"model must be M1 or M2, got {self.model!r}")
        if self.nsim < 1 or self.B < 1:
            raise ValidationError("nsim and B must be at least 1")
        if self.beta < 0:
            raise ValidationError("beta must be nonnegative")
        if self.k < 2 or self.n_per_group < 1:
            raise ValidationError("need k >= 2 groups with at least one curve each")
        if self.smoothing not in ("interpolate", "gcv"):
            raise ValidationError("smoothing must be 'interpolate' or 'gcv'")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_points)


def mean_function(model: str, beta: float, t) -> np.ndarray:
    """Mean curve of the deviating group; beta = 0 gives the common mean."""
    t = np.asarray(t, float)
    base = 30.0 * (1.0 - t) * t
    if model == "M1":
        spike = (t > 0.325) & (t < 0.3575)
        return base - 3.0 * beta * np.abs(np.sin(16 * np.pi * t)) * spike
    if model == "M2":
        return base - beta * np.abs(np.sin(np.pi * t / 4))
    raise ValidationError(f"unknown model {model!r}")


def gen_dataset(cfg: SimConfig, replicate_seed) -> FunctionalDataset:
    """Noisy observations of k groups; only the last group uses ``cfg.beta``."""
    rng = np.random.default_rng(replicate_seed)
    t = cfg.grid
    sd = math.sqrt(cfg.noise_var)
    rows, groups = [], []
    names = GROUPS if cfg.k == 3 else tuple(chr(ord("A") + j) for j in range(cfg.k))
    for j, name in enumerate(names):
        mu = mean_function(cfg.model, cfg.beta if j == cfg.k - 1 else 0.0, t)
        for _ in range(cfg.n_per_group):
            rows.append(mu + rng.normal(0.0, sd, t.size))
            groups.append(name)
    ids = [f"{g}{i % cfg.n_per_group + 1}" for i, g in enumerate(groups)]
    return FunctionalDataset.from_values(np.array(rows), groups, t, ids)


def _smooth(raw: FunctionalDataset, how: str) -> FunctionalDataset:
    curves = [RawCurve(s, raw.group_names[g], raw.grid, y)
              for s, g, y in zip(raw.subject_ids, raw.labels, raw.values)]
    lam = 0.0 if how == "interpolate" else "gcv"
    return smooth_dataset(curves, knots="observed", degree=3, lam=lam)


def run_replicate(cfg: SimConfig, data_seed, plan_seed) -> dict:
    """One replicate: rejections per interval and per pair within flagged intervals."""
    ds = _smooth(gen_dataset(cfg, data_seed), cfg.smoothing)
    part = IntervalPartition.equal(ds.grid, cfg.m)
    plan = generate_plan(plan_seed, cfg.B, ds.labels)
    nm = null_matrix(ds, part, plan)
    rep = close(nm.observed, nm, cfg.method)
    interval_reject = rep.adjusted_p <= cfg.alpha
    pair_reject = np.zeros((cfg.m, cfg.k * (cfg.k - 1) // 2), dtype=bool)
    if cfg.pairwise:
        for i in np.flatnonzero(interval_reject):
            pw = pairwise_followup(ds, part[i], float(rep.adjusted_p[i]), plan)
            pair_reject[i] = pw.adjusted_p <= cfg.alpha
    return {"interval": interval_reject, "pair": pair_reject}


@dataclass(frozen=True)
class PowerRow:
    beta: float
    interval: int
    hypothesis: str
    rate: float
    se: float


@dataclass
class PowerTable:
    config: dict
    rows: list[PowerRow] = field(default_factory=list)

    def rate(self, beta: float, interval: int, hypothesis: str = "H0") -> float:
        for r in self.rows:
            if math.isclose(r.beta, beta) and r.interval == interval and r.hypothesis == hypothesis:
                return r.rate
        raise KeyError((beta, interval, hypothesis))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["beta", "interval", "hypothesis", "rate", "se"])
            for r in self.rows:
                w.writerow([f"{r.beta:.3f}", r.interval, r.hypothesis, f"{r.rate:.4f}", f"{r.se:.4f}"])


def _pair_names(k):
    names = GROUPS if k == 3 else tuple(chr(ord("A") + j) for j in range(k))
    return [names[a] + names[b] for a in range(k) for b in range(a + 1, k)]


def _replicate_seeds(seed, nsim):
    # same data and plan seeds for every beta: common random numbers
    children = np.random.SeedSequence(seed).spawn(nsim)
    return [tuple(c.spawn(2)) for c in children]


def _run_beta(args):
    cfg, seeds = args
    return [run_replicate(cfg, ds, ps) for ds, ps in seeds]


def run_power(cfg: SimConfig, betas: Sequence[float] | None = None, n_jobs: int = 1) -> PowerTable:
    """Rejection rates at level ``cfg.alpha`` over ``cfg.nsim`` replicates per beta.

    Interval rows use hypothesis ``"H0"``; pairwise rows use the pair name
    (``"AB"``, ...) and count a rejection only when the interval was
    flagged and the pair's adjusted p-value passed.
    """
    betas = [cfg.beta] if betas is None else list(betas)
    seeds = _replicate_seeds(cfg.seed, cfg.nsim)
    table = PowerTable(config={**asdict(cfg), "betas": betas})
    pairs = _pair_names(cfg.k)
    for beta in betas:
        bcfg = replace(cfg, beta=float(beta))
        if n_jobs > 1:
            chunks = [seeds[i::n_jobs] for i in range(n_jobs)]
            with ProcessPoolExecutor(n_jobs) as pool:
                results = [r for part in pool.map(_run_beta, [(bcfg, c) for c in chunks]) for r in part]
        else:
            results = _run_beta((bcfg, seeds))
        inter = np.array([r["interval"] for r in results], dtype=float)
        pair = np.array([r["pair"] for r in results], dtype=float)
        for i in range(cfg.m):
            rate = float(inter[:, i].mean())
            table.rows.append(PowerRow(float(beta), i + 1, "H0", rate, math.sqrt(rate * (1 - rate) / cfg.nsim)))
            if cfg.pairwise:
                for p, name in enumerate(pairs):
                    rate = float(pair[:, i, p].mean())
                    table.rows.append(
                        PowerRow(float(beta), i + 1, name, rate, math.sqrt(rate * (1 - rate) / cfg.nsim))
                    )
    return table


# ---------------------------------------------------------------------------
# demo erythrograms

DEMO_INTERVALS = [
    {"name": "latent", "a": 0, "b": 60},
    {"name": "least_stable", "a": 61, "b": 165},
    {"name": "general", "a": 166, "b": 240},
    {"name": "plateau", "a": 241, "b": 720},
]

# Two erythrocyte populations lyse at different times. Per group:
# (midpoint of the unstable population, midpoint of the general population,
#  final lysed percentage).
_DOSES = ("control", "low", "medium", "high")
_EFFECT = {
    "control": (130.0, 250.0, 96.0),
    "low": (112.0, 272.0, 90.0),
    "medium": (116.0, 266.0, 92.0),
    "high": (126.0, 254.0, 95.0),
}
_INCUBATIONS = {"incubation_0min": 0.0, "incubation_15min": 1.0, "incubation_30min": 1.0, "incubation_60min": 0.0}


def _erythrogram(rng, t, params, strength):
    ctrl = _EFFECT["control"]
    t_old, t_gen, top = (c + strength * (p - c) for p, c in zip(params, ctrl))
    t_old += rng.normal(0, 4)
    t_gen += rng.normal(0, 6)
    top += rng.normal(0, 1.0)
    frac = 0.3
    curve = top * (frac / (1 + np.exp(-(t - t_old) / 9.0)) + (1 - frac) / (1 + np.exp(-(t - t_gen) / 22.0)))
    curve = curve + rng.normal(0, 0.5, t.size)
    return np.maximum.accumulate(np.clip(curve, 0, 100))


def gen_demo_erythrograms(seed: int = 2013, out_dir=None) -> dict[str, list[RawCurve]]:
    """Hemolysis-like S curves: 4 dose groups x 5 runs, 49 readings over 0-720 s.

    Two datasets carry a dose effect and two do not. With ``out_dir`` the
    datasets are written as long-format CSV files together with
    ``intervals.json``.
    """
    t = np.arange(0.0, 721.0, 15.0)
    rng = np.random.default_rng(seed)
    out = {}
    for name, strength in _INCUBATIONS.items():
        curves = []
        for dose in _DOSES:
            for rep in range(5):
                y = _erythrogram(rng, t, _EFFECT[dose], strength)
                curves.append(RawCurve(f"{dose}_{rep + 1}", dose, t, y))
        out[name] = curves
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name, curves in out.items():
            write_curves_csv(curves, os.path.join(out_dir, f"{name}.csv"))
        with open(os.path.join(out_dir, "intervals.json"), "w", encoding="utf-8") as fh:
            json.dump(DEMO_INTERVALS, fh, indent=2)
            fh.write("\n")
    return out
