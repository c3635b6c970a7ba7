"""Normalizers onto the probability simplex: sparsemax and softmax.

The numba kernels (underscore-prefixed) are shared with the fused training
loop in :mod:`sasteer.pipeline`; the public functions validate their inputs
and wrap the kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import CapacityError, InvalidInputError

ORACLE_MAX_N = 20


@dataclass(frozen=True)
class SparsemaxThreshold:
    k: int
    tau: float


@njit(cache=True)
def _threshold(z):
    # Stable descending sort: ties keep their original index order.
    order = np.argsort(-z, kind="mergesort")
    cum = 0.0
    k = 1
    cum_k = z[order[0]]
    for j in range(z.shape[0]):
        zj = z[order[j]]
        cum += zj
        if 1.0 + (j + 1) * zj > cum:
            k = j + 1
            cum_k = cum
    return k, (cum_k - 1.0) / k


@njit(cache=True)
def _sparsemax_into(z, out):
    # Shift by the max first so exact shifts of z give bit-identical output.
    zmax = z[0]
    for i in range(1, z.shape[0]):
        if z[i] > zmax:
            zmax = z[i]
    shifted = z - zmax
    k, tau = _threshold(shifted)
    for i in range(z.shape[0]):
        d = shifted[i] - tau
        out[i] = d if d > 0.0 else 0.0


@njit(cache=True)
def _sparsemax_jvp_into(p, v, out):
    # Generalized Jacobian diag(s) - s s^T / |S| on the support S = {p > 0}.
    total = 0.0
    count = 0
    for i in range(p.shape[0]):
        if p[i] > 0.0:
            total += v[i]
            count += 1
    mean = total / count
    for i in range(p.shape[0]):
        out[i] = v[i] - mean if p[i] > 0.0 else 0.0


@njit(cache=True)
def _softmax_into(z, out):
    zmax = z[0]
    for i in range(1, z.shape[0]):
        if z[i] > zmax:
            zmax = z[i]
    total = 0.0
    for i in range(z.shape[0]):
        out[i] = np.exp(z[i] - zmax)
        total += out[i]
    for i in range(z.shape[0]):
        out[i] /= total


@njit(cache=True)
def _softmax_jvp_into(p, v, out):
    dot = 0.0
    for i in range(p.shape[0]):
        dot += p[i] * v[i]
    for i in range(p.shape[0]):
        out[i] = p[i] * (v[i] - dot)


def _as_scores(z) -> np.ndarray:
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty score vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("score vector contains non-finite entries")
    return z


def _as_direction(z: np.ndarray, v) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != z.shape:
        raise InvalidInputError(f"direction shape {v.shape} does not match scores {z.shape}")
    return v


def sparsemax_threshold(z) -> SparsemaxThreshold:
    """Support size ``k`` and threshold ``tau`` with ``sparsemax(z) = max(z - tau, 0)``."""
    z = _as_scores(z)
    k, tau = _threshold(z)
    return SparsemaxThreshold(int(k), float(tau))


def sparsemax(z) -> np.ndarray:
    """Euclidean projection of ``z`` onto the probability simplex."""
    z = _as_scores(z)
    out = np.empty_like(z)
    _sparsemax_into(z, out)
    return out


def sparsemax_jvp(z, v) -> np.ndarray:
    z = _as_scores(z)
    v = _as_direction(z, v)
    p = np.empty_like(z)
    _sparsemax_into(z, p)
    out = np.empty_like(z)
    _sparsemax_jvp_into(p, v, out)
    return out


def softmax(z) -> np.ndarray:
    z = _as_scores(z)
    out = np.empty_like(z)
    _softmax_into(z, out)
    return out


def softmax_jvp(z, v) -> np.ndarray:
    """``(diag(p) - p p^T) v`` with ``p = softmax(z)``."""
    z = _as_scores(z)
    v = _as_direction(z, v)
    p = np.empty_like(z)
    _softmax_into(z, p)
    out = np.empty_like(z)
    _softmax_jvp_into(p, v, out)
    return out


def oracle_simplex_projection(z) -> np.ndarray:
    """Brute-force simplex projection by enumerating every candidate support.

    For a fixed support S the equality-constrained problem has the closed form
    ``p_S = z_S - (sum(z_S) - 1) / |S|``. Among candidates that are feasible
    (nonnegative), the one closest to ``z`` is returned. Exponential in ``n``;
    only meant as a test oracle.
    """
    z = _as_scores(z)
    n = z.shape[0]
    if n > ORACLE_MAX_N:
        raise CapacityError(f"oracle enumerates 2^n supports; n={n} exceeds {ORACLE_MAX_N}")

    best, best_dist = None, np.inf
    bits = np.arange(n)
    chunk = 1 << 14
    for start in range(1, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n))
        masks = ((codes[:, None] >> bits) & 1).astype(bool)
        sizes = masks.sum(axis=1)
        shift = ((masks * z).sum(axis=1) - 1.0) / sizes
        cand = np.where(masks, z - shift[:, None], 0.0)
        feasible = np.all(cand >= -1e-15, axis=1)
        if not feasible.any():
            continue
        dist = ((cand - z) ** 2).sum(axis=1)
        dist[~feasible] = np.inf
        i = int(np.argmin(dist))
        if dist[i] < best_dist:
            best, best_dist = cand[i], dist[i]
    return np.maximum(best, 0.0)


def support(p) -> np.ndarray:
    """Indices of the strictly positive entries."""
    return np.flatnonzero(np.asarray(p) > 0)
