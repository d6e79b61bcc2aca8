"""Hot loops of the permutation engine.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with the same signature. The active pair is chosen once at import
time from the ``FANOVA_BACKEND`` environment variable (``numba`` or
``numpy``). Without the variable numba is used when it imports cleanly.

Inputs are always C-contiguous ``float64`` curve matrices and ``int64``
label matrices; callers go through :func:`permuted_group_means` and
:func:`permuted_interval_stats`, which normalise dtypes first.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "permuted_group_means",
    "permuted_interval_stats",
]

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


def _requested_backend() -> str:
    choice = os.environ.get("FANOVA_BACKEND", "").strip().lower()
    if choice in ("", "auto"):
        return "numba" if HAVE_NUMBA else "numpy"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"FANOVA_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAVE_NUMBA:
        warnings.warn("FANOVA_BACKEND=numba but numba is not importable; using numpy")
        return "numpy"
    return choice


# ---------------------------------------------------------------------------
# numpy reference path

def _group_means_numpy(Y, labels, sizes):
    B, n = labels.shape
    k = sizes.shape[0]
    out = np.empty((B, k, Y.shape[1]))
    for j in range(k):
        mask = (labels == j).astype(np.float64)
        out[:, j, :] = (mask @ Y) / sizes[j]
    return out


def _interval_stats_numpy(Y, labels, sizes, weights, chunk=512):
    B = labels.shape[0]
    k = sizes.shape[0]
    grand = Y.sum(axis=0) / sizes.sum()
    out = np.empty((B, weights.shape[1]))
    for lo in range(0, B, chunk):
        means = _group_means_numpy(Y, labels[lo:lo + chunk], sizes)
        dev = means - grand
        between = np.einsum("j,bjg->bg", sizes, dev * dev)
        out[lo:lo + chunk] = between @ weights / (k - 1)
    return out


# ---------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _group_means_numba(Y, labels, sizes):
        B, n = labels.shape
        G = Y.shape[1]
        k = sizes.shape[0]
        out = np.zeros((B, k, G))
        for b in range(B):
            for s in range(n):
                j = labels[b, s]
                for g in range(G):
                    out[b, j, g] += Y[s, g]
            for j in range(k):
                inv = 1.0 / sizes[j]
                for g in range(G):
                    out[b, j, g] *= inv
        return out

    @njit(cache=True)
    def _interval_stats_numba(Y, labels, sizes, weights):
        B, n = labels.shape
        G = Y.shape[1]
        k = sizes.shape[0]
        m = weights.shape[1]
        total = 0.0
        for j in range(k):
            total += sizes[j]
        # grand mean does not depend on the labelling
        grand = np.zeros(G)
        for s in range(n):
            for g in range(G):
                grand[g] += Y[s, g]
        for g in range(G):
            grand[g] /= total

        out = np.zeros((B, m))
        acc = np.empty((k, G))
        between = np.empty(G)
        for b in range(B):
            acc[:, :] = 0.0
            for s in range(n):
                j = labels[b, s]
                for g in range(G):
                    acc[j, g] += Y[s, g]
            between[:] = 0.0
            for j in range(k):
                inv = 1.0 / sizes[j]
                for g in range(G):
                    d = acc[j, g] * inv - grand[g]
                    between[g] += sizes[j] * d * d
            for i in range(m):
                t = 0.0
                for g in range(G):
                    t += between[g] * weights[g, i]
                out[b, i] = t / (k - 1)
        return out


BACKEND = _requested_backend()

if BACKEND == "numba":
    _group_means_impl = _group_means_numba
    _interval_stats_impl = _interval_stats_numba
else:
    _group_means_impl = _group_means_numpy
    _interval_stats_impl = _interval_stats_numpy


def _prepare(Y, labels, sizes):
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    labels = np.ascontiguousarray(np.atleast_2d(labels), dtype=np.int64)
    sizes = np.ascontiguousarray(sizes, dtype=np.float64)
    if labels.shape[1] != Y.shape[0]:
        raise ValueError("label rows must have one entry per curve")
    return Y, labels, sizes


def permuted_group_means(Y, labels, sizes, backend=None):
    """Group-mean curves for every labelling.

    ``Y`` is (n, G), ``labels`` is (B, n) with codes ``0..k-1`` and
    ``sizes`` holds the k group sizes. Returns a (B, k, G) array.
    """
    Y, labels, sizes = _prepare(Y, labels, sizes)
    impl = _group_means_impl if backend is None else _pick(backend)[0]
    return impl(Y, labels, sizes)


def permuted_interval_stats(Y, labels, sizes, weights, backend=None):
    """Between-group interval statistic for every labelling.

    ``weights`` is a (G, m) matrix whose column i holds the quadrature
    weights of interval i. Entry (b, i) of the result is
    ``sum_g weights[g, i] * sum_j n_j (mean_j(g) - grand(g))**2 / (k - 1)``
    under labelling b.
    """
    Y, labels, sizes = _prepare(Y, labels, sizes)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    impl = _interval_stats_impl if backend is None else _pick(backend)[1]
    return impl(Y, labels, sizes, weights)


def _pick(backend):
    if backend == "numpy":
        return _group_means_numpy, _interval_stats_numpy
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _group_means_numba, _interval_stats_numba
    raise ValueError(f"unknown backend {backend!r}")
