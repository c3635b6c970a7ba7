"""Hand-written neural primitives: dense layer, LSTM cell, Xavier init, Adam, L1 loss.

Gate order inside every LSTM weight block is (input, forget, cell, output),
stacked along the first axis, acting on the concatenation ``[x; h]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InvalidInputError

FORGET_BIAS = 1.0


def xavier_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot init, shape ``(fan_out, fan_in)``, bound ``sqrt(6 / (fan_in + fan_out))``."""
    if fan_in < 1 or fan_out < 1:
        raise InvalidInputError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def _check_vec(name, x, size):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (size,):
        raise InvalidInputError(f"{name} must have shape ({size},), got {x.shape}")
    return x


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise InvalidInputError(f"inconsistent dense shapes W{self.W.shape} b{self.b.shape}")

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    x = _check_vec("x", x, layer.in_dim)
    return layer.W @ x + layer.b


def dense_backward(layer: DenseLayer, x, upstream):
    """Returns ``(gradW, gradb, gradx)`` for ``y = W x + b``."""
    x = _check_vec("x", x, layer.in_dim)
    upstream = _check_vec("upstream", upstream, layer.out_dim)
    return np.outer(upstream, x), upstream.copy(), layer.W.T @ upstream


@dataclass
class LstmParams:
    W: np.ndarray  # (4D, I + D)
    b: np.ndarray  # (4D,)

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        rows = self.W.shape[0] if self.W.ndim == 2 else -1
        if rows % 4 or rows < 4 or self.b.shape != (rows,) or self.W.shape[1] <= rows // 4:
            raise InvalidInputError(f"inconsistent LSTM shapes W{self.W.shape} b{self.b.shape}")

    @property
    def hidden_size(self):
        return self.W.shape[0] // 4

    @property
    def input_size(self):
        return self.W.shape[1] - self.hidden_size

    @classmethod
    def init(cls, input_size, hidden_size, rng):
        D = hidden_size
        W = np.concatenate([xavier_init(input_size + D, D, rng) for _ in range(4)])
        b = np.zeros(4 * D)
        b[D:2 * D] = FORGET_BIAS
        return cls(W, b)


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size):
        return cls(np.zeros(hidden_size), np.zeros(hidden_size))


@dataclass
class LstmCache:
    xh: np.ndarray
    gates: np.ndarray  # activated i, f, g, o
    c_prev: np.ndarray
    tanh_c: np.ndarray


@dataclass
class LstmGrads:
    W: np.ndarray
    b: np.ndarray


@njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _lstm_forward(W, b, xh, c_prev, gates, c_new, tanh_c, h_new):
    D = c_prev.shape[0]
    n_in = xh.shape[0]
    for r in range(4 * D):
        acc = b[r]
        for j in range(n_in):
            acc += W[r, j] * xh[j]
        if 2 * D <= r < 3 * D:
            gates[r] = np.tanh(acc)
        else:
            gates[r] = _sigmoid(acc)
    for d in range(D):
        c = gates[D + d] * c_prev[d] + gates[d] * gates[2 * D + d]
        c_new[d] = c
        tanh_c[d] = np.tanh(c)
        h_new[d] = gates[3 * D + d] * tanh_c[d]


@njit(cache=True)
def _lstm_backward(W, xh, gates, c_prev, tanh_c, dh, dc, dW, db, dxh, dc_prev):
    """Accumulates into ``dW``/``db``; overwrites ``dxh`` and ``dc_prev``."""
    D = c_prev.shape[0]
    n_in = xh.shape[0]
    dz = np.empty(4 * D)
    for d in range(D):
        i = gates[d]
        f = gates[D + d]
        g = gates[2 * D + d]
        o = gates[3 * D + d]
        tc = tanh_c[d]
        dct = dc[d] + dh[d] * o * (1.0 - tc * tc)
        dz[d] = dct * g * i * (1.0 - i)
        dz[D + d] = dct * c_prev[d] * f * (1.0 - f)
        dz[2 * D + d] = dct * i * (1.0 - g * g)
        dz[3 * D + d] = dh[d] * tc * o * (1.0 - o)
        dc_prev[d] = dct * f
    for j in range(n_in):
        dxh[j] = 0.0
    for r in range(4 * D):
        g = dz[r]
        db[r] += g
        for j in range(n_in):
            dW[r, j] += g * xh[j]
            dxh[j] += W[r, j] * g


def lstm_step(params: LstmParams, x, state: LstmState):
    """One forget-gate LSTM update. Returns ``(new_state, cache)``."""
    D, I = params.hidden_size, params.input_size
    x = _check_vec("x", x, I)
    h = _check_vec("h", state.h, D)
    c = np.ascontiguousarray(_check_vec("c", state.c, D))
    xh = np.concatenate([x, h])
    gates = np.empty(4 * D)
    c_new, tanh_c, h_new = np.empty(D), np.empty(D), np.empty(D)
    _lstm_forward(params.W, params.b, xh, c, gates, c_new, tanh_c, h_new)
    return LstmState(h_new, c_new), LstmCache(xh, gates, c.copy(), tanh_c)


def lstm_backward(params: LstmParams, cache: LstmCache, upstream_h, upstream_c):
    """Reverse-mode gradients of :func:`lstm_step`.

    Returns ``(LstmGrads, grad_x, LstmState(grad_h_prev, grad_c_prev))``.
    """
    D, I = params.hidden_size, params.input_size
    if cache.xh.shape != (I + D,) or cache.gates.shape != (4 * D,):
        raise InvalidInputError("cache does not match these LSTM parameters")
    dh = np.ascontiguousarray(_check_vec("upstream_h", upstream_h, D))
    dc = np.ascontiguousarray(_check_vec("upstream_c", upstream_c, D))
    dW, db = np.zeros_like(params.W), np.zeros_like(params.b)
    dxh, dc_prev = np.empty(I + D), np.empty(D)
    _lstm_backward(params.W, cache.xh, cache.gates, cache.c_prev, cache.tanh_c,
                   dh, dc, dW, db, dxh, dc_prev)
    return LstmGrads(dW, db), dxh[:I], LstmState(dxh[I:], dc_prev)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_update(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """Bias-corrected Adam step, applied in place. Returns ``(params, state)``."""
    if params.shape != grads.shape:
        raise InvalidInputError(f"grad shape {grads.shape} != param shape {params.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    elif state.m.shape != params.shape:
        raise InvalidInputError("Adam moments do not match parameter shape")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def l1_loss(pred: float, target: float):
    """``(|pred - target|, sign(pred - target))`` with ``sign(0) = 0``."""
    if not (np.isfinite(pred) and np.isfinite(target)):
        raise InvalidInputError("l1_loss needs finite inputs")
    d = float(pred) - float(target)
    return abs(d), float(np.sign(d))


def mean_absolute_error(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.size == 0:
        raise InvalidInputError("predictions and targets must be non-empty and equal length")
    return float(np.mean(np.abs(preds - targets)))
