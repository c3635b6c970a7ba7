"""Location-wise visual attention over a feature cube.

Each of the ``M*N`` locations gets a scalar score
``e_i = tanh(w_f . X_i + w_h . h + b)`` with weights shared across locations.
The scores are normalized (sparsemax, softmax, or ignored in favour of a
uniform map) and the context is the weighted sum of location features.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InvalidInputError
from .simplex import _softmax_into, _softmax_jvp_into, _sparsemax_into, _sparsemax_jvp_into


class NormalizerKind(enum.Enum):
    SPARSE = "sparse"
    SOFT = "soft"
    NONE = "none"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]


_KIND_CODES = {NormalizerKind.SPARSE: 0, NormalizerKind.SOFT: 1, NormalizerKind.NONE: 2}


@dataclass
class FeatureCube:
    data: np.ndarray  # (M, N, K)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise InvalidInputError(f"feature cube must be (M, N, K) with positive dims, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("feature cube contains non-finite values")

    @property
    def shape(self):
        return self.data.shape

    @property
    def locations(self) -> np.ndarray:
        """``(M*N, K)`` row-major view, one row per location."""
        M, N, K = self.data.shape
        return np.ascontiguousarray(self.data.reshape(M * N, K))


@dataclass
class AttentionParams:
    w_f: np.ndarray  # (K,)
    w_h: np.ndarray  # (D,)
    b: float = 0.0


@dataclass
class AttentionMap:
    weights: np.ndarray  # (M*N,)
    grid_shape: tuple

    @property
    def grid(self) -> np.ndarray:
        return self.weights.reshape(self.grid_shape)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.weights > 0))


@njit(cache=True)
def _scores_into(w_f, w_h, b, X, h, out):
    shift = b
    for d in range(h.shape[0]):
        shift += w_h[d] * h[d]
    for i in range(X.shape[0]):
        acc = shift
        for k in range(X.shape[1]):
            acc += w_f[k] * X[i, k]
        out[i] = np.tanh(acc)


@njit(cache=True)
def _normalize_into(kind, scores, out):
    if kind == 0:
        _sparsemax_into(scores, out)
    elif kind == 1:
        _softmax_into(scores, out)
    else:
        out[:] = 1.0 / scores.shape[0]


@njit(cache=True)
def _normalizer_jvp_into(kind, p, v, out):
    if kind == 0:
        _sparsemax_jvp_into(p, v, out)
    elif kind == 1:
        _softmax_jvp_into(p, v, out)
    else:
        out[:] = 0.0


@njit(cache=True)
def _context_into(p, X, out):
    out[:] = 0.0
    for i in range(X.shape[0]):
        if p[i] != 0.0:
            for k in range(X.shape[1]):
                out[k] += p[i] * X[i, k]


def _check(name, x, size):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (size,):
        raise InvalidInputError(f"{name} must have shape ({size},), got {x.shape}")
    return x


def attention_scores(params: AttentionParams, cube: FeatureCube, h) -> np.ndarray:
    X = cube.locations
    w_f = _check("w_f", params.w_f, X.shape[1])
    w_h = np.ascontiguousarray(params.w_h, dtype=np.float64)
    h = _check("h", h, w_h.shape[0])
    out = np.empty(X.shape[0])
    _scores_into(w_f, w_h, float(params.b), X, h, out)
    return out


def attention_scores_backward(params: AttentionParams, cube: FeatureCube, h, upstream_scores):
    """Gradients of the tanh scorer.

    Returns ``(AttentionParams of grads, grad_h, grad_cube)``.
    """
    X = cube.locations
    scores = attention_scores(params, cube, h)
    du = _check("upstream_scores", upstream_scores, X.shape[0]) * (1.0 - scores ** 2)
    total = du.sum()
    grads = AttentionParams(X.T @ du, total * np.asarray(h, dtype=np.float64), float(total))
    grad_cube = np.outer(du, params.w_f).reshape(cube.shape)
    return grads, total * np.asarray(params.w_h, dtype=np.float64), grad_cube


def attend(scores, cube: FeatureCube, kind: NormalizerKind):
    """Normalize scores into a map and pool the cube. Returns ``(AttentionMap, context)``."""
    M, N, K = cube.shape
    scores = _check("scores", scores, M * N)
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores contain non-finite entries")
    p = np.empty(M * N)
    _normalize_into(kind.code, scores, p)
    ctx = np.empty(K)
    _context_into(p, cube.locations, ctx)
    return AttentionMap(p, (M, N)), ctx


def attend_backward(scores, cube: FeatureCube, kind: NormalizerKind, upstream_context, upstream_map=None):
    """Gradients of :func:`attend` w.r.t. ``scores`` and the cube. Returns ``(grad_scores, grad_cube)``."""
    M, N, K = cube.shape
    scores = _check("scores", scores, M * N)
    d_ctx = _check("upstream_context", upstream_context, K)
    X = cube.locations
    p = np.empty(M * N)
    _normalize_into(kind.code, scores, p)
    d_p = X @ d_ctx
    if upstream_map is not None:
        d_p = d_p + _check("upstream_map", upstream_map, M * N)
    d_scores = np.empty(M * N)
    _normalizer_jvp_into(kind.code, p, np.ascontiguousarray(d_p), d_scores)
    grad_cube = np.outer(p, d_ctx).reshape(M, N, K)
    return d_scores, grad_cube
