"""Feature cube -> attention -> LSTM -> two-layer head -> steering.

All learned weights live in one flat float64 vector (``ModelParams.theta``);
the named blocks are reshaped views into it, so Adam runs on a single array
and checkpoints serialize one vector per block.

Training is truncated BPTT: the LSTM state is carried across consecutive
windows of a sequence while gradients stop at each window boundary. The
window forward and backward passes are fused numba kernels built from the
same primitives the public per-op functions use.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .attention import (
    AttentionMap,
    AttentionParams,
    FeatureCube,
    NormalizerKind,
    _context_into,
    _normalize_into,
    _normalizer_jvp_into,
    _scores_into,
)
from .data import Sequence
from .errors import InvalidInputError, TrainingDivergedError
from .nn import AdamState, DenseLayer, LstmParams, LstmState, _lstm_backward, _lstm_forward, adam_update, xavier_init

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelDims:
    K: int  # feature channels
    D: int = 32  # LSTM hidden size
    H: int = 32  # FCN hidden width

    def validate(self):
        if min(self.K, self.D, self.H) < 1:
            raise InvalidInputError(f"all model dimensions must be >= 1, got {self}")


def _layout(dims: ModelDims, use_lstm: bool):
    K, D, H = dims.K, dims.D, dims.H
    blocks = [("att.w_f", (K,)), ("att.w_h", (D,)), ("att.b", (1,))]
    if use_lstm:
        blocks += [("lstm.W", (4 * D, K + D)), ("lstm.b", (4 * D,))]
    head_in = D if use_lstm else K
    blocks += [("head1.W", (H, head_in)), ("head1.b", (H,)), ("head2.W", (1, H)), ("head2.b", (1,))]
    return blocks


class ModelParams:
    """Weights plus the variant flags that select the architecture.

    ``kind`` picks the attention normalizer; ``use_lstm=False`` feeds the
    context straight into the head (the CNN baseline when combined with
    ``kind=NONE``); ``linear_head`` drops the tanh between the head layers.
    """

    def __init__(self, dims: ModelDims, kind: NormalizerKind, use_lstm: bool = True,
                 linear_head: bool = False, seed: int | None = None, theta=None):
        dims.validate()
        self.dims = dims
        self.kind = NormalizerKind(kind)
        self.use_lstm = bool(use_lstm)
        self.linear_head = bool(linear_head)
        self.seed = seed
        self.layout = _layout(dims, self.use_lstm)
        size = sum(int(np.prod(s)) for _, s in self.layout)
        if theta is None:
            theta = np.zeros(size)
        theta = np.array(theta, dtype=np.float64)
        if theta.shape != (size,):
            raise InvalidInputError(f"parameter vector has {theta.size} entries, layout needs {size}")
        self.theta = theta
        self.blocks = {}
        offset = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            self.blocks[name] = self.theta[offset:offset + n].reshape(shape)
            offset += n

    def __getitem__(self, name):
        return self.blocks[name]

    @property
    def attention(self):
        return AttentionParams(self["att.w_f"], self["att.w_h"], float(self["att.b"][0]))

    @property
    def lstm(self):
        return LstmParams(self["lstm.W"], self["lstm.b"]) if self.use_lstm else None

    @property
    def head1(self):
        return DenseLayer(self["head1.W"], self["head1.b"])

    @property
    def head2(self):
        return DenseLayer(self["head2.W"], self["head2.b"])

    def copy(self):
        return ModelParams(self.dims, self.kind, self.use_lstm, self.linear_head, self.seed, self.theta.copy())

    def same_architecture(self, other):
        return (self.dims, self.kind, self.use_lstm, self.linear_head) == (
            other.dims, other.kind, other.use_lstm, other.linear_head)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.same_architecture(other) and self.seed == other.seed
                and np.array_equal(self.theta, other.theta))

    def __repr__(self):
        return (f"ModelParams({self.dims}, kind={self.kind.value}, use_lstm={self.use_lstm}, "
                f"linear_head={self.linear_head}, seed={self.seed})")


def init_model(dims: ModelDims, kind=NormalizerKind.SPARSE, use_lstm=True, seed=0, linear_head=False) -> ModelParams:
    """Xavier-uniform weights from ``default_rng(seed)``; biases zero except the LSTM forget gate."""
    model = ModelParams(dims, kind, use_lstm, linear_head, seed)
    rng = np.random.default_rng(seed)
    K, D, H = dims.K, dims.D, dims.H
    model["att.w_f"][:] = xavier_init(K, 1, rng)[0]
    model["att.w_h"][:] = xavier_init(D, 1, rng)[0]
    if use_lstm:
        lstm = LstmParams.init(K, D, rng)
        model["lstm.W"][:] = lstm.W
        model["lstm.b"][:] = lstm.b
    head_in = D if use_lstm else K
    model["head1.W"][:] = xavier_init(head_in, H, rng)
    model["head2.W"][:] = xavier_init(H, 1, rng)
    return model


# ---------------------------------------------------------------------------
# fused window kernels


@njit(cache=True)
def _forward_window(kind, use_lstm, linear_head, w_f, w_h, b_att, W_l, b_l, W1, b1, W2, b2,
                    X, E, P, CTX, XH, GATES, C, TC, HS, HIN, A1, Y):
    """Runs ``X.shape[0]`` steps from the state in ``HS[0]``, ``C[0]``, filling every cache row."""
    L, MN, K = X.shape
    H = W1.shape[0]
    for t in range(L):
        if kind != 2:
            _scores_into(w_f, w_h, b_att[0], X[t], HS[t], E[t])
        _normalize_into(kind, E[t], P[t])
        _context_into(P[t], X[t], CTX[t])
        if use_lstm:
            XH[t, :K] = CTX[t]
            XH[t, K:] = HS[t]
            _lstm_forward(W_l, b_l, XH[t], C[t], GATES[t], C[t + 1], TC[t], HS[t + 1])
            HIN[t] = HS[t + 1]
        else:
            HIN[t] = CTX[t]
            HS[t + 1] = HS[t]
            C[t + 1] = C[t]
        y = b2[0]
        for j in range(H):
            acc = b1[j]
            for k in range(HIN.shape[1]):
                acc += W1[j, k] * HIN[t, k]
            if not linear_head:
                acc = np.tanh(acc)
            A1[t, j] = acc
            y += W2[0, j] * acc
        Y[t] = y


@njit(cache=True)
def _backward_window(kind, use_lstm, linear_head, w_f, w_h, W_l, W1, W2,
                     X, E, P, XH, GATES, C, TC, HS, HIN, A1, dY,
                     g_wf, g_wh, g_batt, g_Wl, g_bl, g_W1, g_b1, g_W2, g_b2):
    """Accumulates parameter gradients of ``sum_t dY[t] * Y[t]``; nothing flows into the initial state."""
    L, MN, K = X.shape
    D = HS.shape[1]
    H, n_in = W1.shape
    dh_next = np.zeros(D)
    dc_next = np.zeros(D)
    dc_prev = np.zeros(D)
    dxh = np.zeros(K + D)
    dctx = np.zeros(K)
    dhin = np.zeros(n_in)
    dz1 = np.zeros(H)
    dp = np.zeros(MN)
    ds = np.zeros(MN)
    for t in range(L - 1, -1, -1):
        dy = dY[t]
        g_b2[0] += dy
        for j in range(H):
            a = A1[t, j]
            g_W2[0, j] += dy * a
            g = W2[0, j] * dy
            dz1[j] = g if linear_head else g * (1.0 - a * a)
        for k in range(n_in):
            dhin[k] = 0.0
        for j in range(H):
            g = dz1[j]
            g_b1[j] += g
            for k in range(n_in):
                g_W1[j, k] += g * HIN[t, k]
                dhin[k] += W1[j, k] * g
        if use_lstm:
            for d in range(D):
                dhin[d] += dh_next[d]
            _lstm_backward(W_l, XH[t], GATES[t], C[t], TC[t], dhin, dc_next, g_Wl, g_bl, dxh, dc_prev)
            dctx[:] = dxh[:K]
            dh_next[:] = dxh[K:]
            dc_next[:] = dc_prev
        else:
            dctx[:] = dhin
            dh_next[:] = 0.0
        if kind != 2:
            for i in range(MN):
                acc = 0.0
                for k in range(K):
                    acc += X[t, i, k] * dctx[k]
                dp[i] = acc
            _normalizer_jvp_into(kind, P[t], dp, ds)
            total = 0.0
            for i in range(MN):
                du = ds[i] * (1.0 - E[t, i] * E[t, i])
                if du != 0.0:
                    total += du
                    for k in range(K):
                        g_wf[k] += du * X[t, i, k]
            g_batt[0] += total
            for d in range(D):
                g_wh[d] += total * HS[t, d]
                dh_next[d] += total * w_h[d]


class _Workspace:
    """Cache arrays for a window of up to ``capacity`` steps."""

    def __init__(self, model: ModelParams, grid_cells: int, capacity: int):
        K, D, H = model.dims.K, model.dims.D, model.dims.H
        self.model = model
        self.capacity = capacity
        self.E = np.zeros((capacity, grid_cells))
        self.P = np.zeros((capacity, grid_cells))
        self.CTX = np.zeros((capacity, K))
        self.XH = np.zeros((capacity, K + D))
        self.GATES = np.zeros((capacity, 4 * D))
        self.C = np.zeros((capacity + 1, D))
        self.TC = np.zeros((capacity, D))
        self.HS = np.zeros((capacity + 1, D))
        self.HIN = np.zeros((capacity, D if model.use_lstm else K))
        self.A1 = np.zeros((capacity, H))
        self.Y = np.zeros(capacity)
        self.length = 0
        self._empty = np.zeros((0, 0))
        self._empty1 = np.zeros(0)

    def _lstm_blocks(self):
        m = self.model
        if m.use_lstm:
            return m["lstm.W"], m["lstm.b"]
        return self._empty, self._empty1

    def forward(self, X, h0, c0):
        """``X`` is ``(L, M*N, K)``; returns the predictions view (overwritten by the next call)."""
        L = X.shape[0]
        if L > self.capacity:
            raise InvalidInputError(f"window of {L} exceeds workspace capacity {self.capacity}")
        m = self.model
        W_l, b_l = self._lstm_blocks()
        self.HS[0] = h0
        self.C[0] = c0
        _forward_window(m.kind.code, m.use_lstm, m.linear_head,
                        m["att.w_f"], m["att.w_h"], m["att.b"], W_l, b_l,
                        m["head1.W"], m["head1.b"], m["head2.W"], m["head2.b"],
                        X, self.E[:L], self.P[:L], self.CTX[:L], self.XH[:L], self.GATES[:L],
                        self.C[:L + 1], self.TC[:L], self.HS[:L + 1], self.HIN[:L], self.A1[:L], self.Y[:L])
        self.X = X
        self.length = L
        return self.Y[:L]

    def backward(self, dY, grad: ModelParams):
        m, L = self.model, self.length
        W_l, _ = self._lstm_blocks()
        if m.use_lstm:
            g_Wl, g_bl = grad["lstm.W"], grad["lstm.b"]
        else:
            g_Wl, g_bl = self._empty, self._empty1
        _backward_window(m.kind.code, m.use_lstm, m.linear_head, m["att.w_f"], m["att.w_h"], W_l,
                         m["head1.W"], m["head2.W"],
                         self.X, self.E[:L], self.P[:L], self.XH[:L], self.GATES[:L], self.C[:L + 1],
                         self.TC[:L], self.HS[:L + 1], self.HIN[:L], self.A1[:L],
                         np.ascontiguousarray(dY, dtype=np.float64),
                         grad["att.w_f"], grad["att.w_h"], grad["att.b"], g_Wl, g_bl,
                         grad["head1.W"], grad["head1.b"], grad["head2.W"], grad["head2.b"])

    def final_state(self):
        L = self.length
        return LstmState(self.HS[L].copy(), self.C[L].copy())


def _check_cube_channels(model, K):
    if K != model.dims.K:
        raise InvalidInputError(f"cube has {K} channels, model expects {model.dims.K}")


def _zero_state(model):
    return LstmState.zeros(model.dims.D)


@dataclass
class StepCache:
    """Intermediates of one :func:`forward_step` (row 0 of each window cache)."""
    scores: np.ndarray
    context: np.ndarray
    head_input: np.ndarray
    head_hidden: np.ndarray
    workspace: _Workspace = field(repr=False)


def forward_step(model: ModelParams, cube: FeatureCube, state: LstmState):
    """One frame through the whole model. Returns ``(steering, map, new_state, cache)``."""
    M, N, K = cube.shape
    _check_cube_channels(model, K)
    if np.shape(state.h) != (model.dims.D,) or np.shape(state.c) != (model.dims.D,):
        raise InvalidInputError("state size does not match the model hidden size")
    ws = _Workspace(model, M * N, 1)
    y = ws.forward(cube.locations[None], state.h, state.c)[0]
    cache = StepCache(ws.E[0].copy(), ws.CTX[0].copy(), ws.HIN[0].copy(), ws.A1[0].copy(), ws)
    return float(y), AttentionMap(ws.P[0].copy(), (M, N)), ws.final_state(), cache


@dataclass
class PredictionTrace:
    predictions: np.ndarray  # (T',)
    targets: np.ndarray  # (T',)
    maps: np.ndarray  # (T', M*N)
    grid_shape: tuple
    delay_frames: int = 0
    final_state: LstmState | None = None

    def __len__(self):
        return self.predictions.shape[0]

    @property
    def mae(self) -> float:
        return float(np.mean(np.abs(self.predictions - self.targets)))

    def map(self, t) -> AttentionMap:
        return AttentionMap(self.maps[t], self.grid_shape)


def run_frames(model: ModelParams, features, state: LstmState | None = None):
    """Forward over ``(T, M*N, K)`` features. Returns ``(predictions, maps, final_state)``."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    T, MN, K = features.shape
    _check_cube_channels(model, K)
    state = state or _zero_state(model)
    ws = _Workspace(model, MN, max(T, 1))
    preds = ws.forward(features, state.h, state.c).copy()
    return preds, ws.P[:T].copy(), ws.final_state()


def predict_sequence(model: ModelParams, seq: Sequence, delay_frames: int = 0,
                     state: LstmState | None = None) -> PredictionTrace:
    """Predict ``s(t + d)`` from frame ``t`` for every ``t < T - d``, carrying LSTM state."""
    T = len(seq)
    if delay_frames < 0 or delay_frames >= T:
        raise InvalidInputError(f"delay of {delay_frames} frames needs a sequence longer than {T}")
    n = T - delay_frames
    preds, maps, final = run_frames(model, seq.flat_features()[:n], state)
    return PredictionTrace(preds, seq.steering[delay_frames:].copy(), maps, tuple(seq.grid_shape),
                           delay_frames, final)


def evaluate_mae(model: ModelParams, seqs, delay_frames: int) -> float:
    """Frame-pooled MAE over several sequences."""
    total, count = 0.0, 0
    for seq in seqs:
        trace = predict_sequence(model, seq, delay_frames)
        total += float(np.sum(np.abs(trace.predictions - trace.targets)))
        count += len(trace)
    return total / count


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 30
    bptt: int = 20
    delay_frames: int = 0
    seed: int = 0
    kind: NormalizerKind = NormalizerKind.SPARSE
    use_lstm: bool = True
    linear_head: bool = False
    hidden: int = 32
    fcn_hidden: int = 32

    def validate(self):
        if not self.lr >= 0 or self.epochs < 0 or self.bptt < 1 or self.delay_frames < 0:
            raise InvalidInputError(f"invalid training config {self}")

    def dims(self, K) -> ModelDims:
        return ModelDims(K, self.hidden, self.fcn_hidden)


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    valid_mae: float


def window_gradient(model: ModelParams, features, targets, state: LstmState, ws: _Workspace | None = None,
                    grad: ModelParams | None = None):
    """L1 loss summed over one window and its gradient.

    Returns ``(predictions, loss, grad, final_state)``; ``grad`` is reset
    before accumulation when passed in.
    """
    ws = ws or _Workspace(model, features.shape[1], features.shape[0])
    grad = grad or ModelParams(model.dims, model.kind, model.use_lstm, model.linear_head)
    preds = ws.forward(features, state.h, state.c)
    err = preds - targets
    loss = float(np.sum(np.abs(err)))
    grad.theta[:] = 0.0
    if not np.isfinite(loss):
        return preds, loss, grad, ws.final_state()  # caller treats this as divergence
    ws.backward(np.sign(err), grad)
    return preds, loss, grad, ws.final_state()


def train(model: ModelParams, train_seqs, valid_seqs, config: TrainConfig):
    """Adam on summed L1 loss over truncated-BPTT windows; one update per window.

    Sequences are visited in a seeded shuffled order each epoch and windows
    within a sequence run in order so the LSTM state can be carried. The
    parameters with the best validation MAE (training MAE when no validation
    data is given) are returned with the per-epoch history.
    """
    config.validate()
    if not train_seqs:
        raise InvalidInputError("no training sequences")
    for seq in list(train_seqs) + list(valid_seqs or []):
        _check_cube_channels(model, seq.channels)
        if len(seq) <= config.delay_frames:
            raise InvalidInputError(f"sequence {seq.id} is not longer than the delay")
    model = model.copy()
    d = config.delay_frames
    prepared = [(seq.flat_features()[:len(seq) - d], seq.steering[d:]) for seq in train_seqs]
    grid_cells = prepared[0][0].shape[1]
    ws = _Workspace(model, grid_cells, config.bptt)
    grad = ModelParams(model.dims, model.kind, model.use_lstm, model.linear_head)
    adam = AdamState(lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])

    best_theta, best_mae = model.theta.copy(), np.inf
    history = []
    for epoch in range(1, config.epochs + 1):
        abs_err, count = 0.0, 0
        for i in rng.permutation(len(prepared)):
            X, targets = prepared[i]
            state = _zero_state(model)
            for start in range(0, X.shape[0], config.bptt):
                stop = min(start + config.bptt, X.shape[0])
                _, loss, grad, state = window_gradient(model, X[start:stop], targets[start:stop], state, ws, grad)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(epoch)
                adam_update(adam, model.theta, grad.theta)
                abs_err += loss
                count += stop - start
        train_mae = abs_err / count
        valid_mae = evaluate_mae(model, valid_seqs, d) if valid_seqs else train_mae
        if not (np.isfinite(valid_mae) and np.all(np.isfinite(model.theta))):
            raise TrainingDivergedError(epoch)
        history.append(EpochRecord(epoch, train_mae, valid_mae))
        log.info("epoch %d train_mae %.5f valid_mae %.5f", epoch, train_mae, valid_mae)
        if valid_mae < best_mae:
            best_mae, best_theta = valid_mae, model.theta.copy()
    model.theta[:] = best_theta
    return model, history


def fit(train_seqs, valid_seqs, config: TrainConfig):
    """Initialize from ``config`` (seed included) and train."""
    if not train_seqs:
        raise InvalidInputError("no training sequences")
    K = train_seqs[0].channels
    model = init_model(config.dims(K), config.kind, config.use_lstm, config.seed, config.linear_head)
    return train(model, train_seqs, valid_seqs, config)


# ---------------------------------------------------------------------------
# gradient check


@dataclass
class GradcheckReport:
    kind: NormalizerKind
    max_rel_error: float
    block_errors: dict
    tolerance: float
    resamples: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


# Fourth-order central difference: f' ~ (f(-2h) - 8 f(-h) + 8 f(h) - f(2h)) / 12h
_STENCIL_OFFSETS = (-2.0, -1.0, 1.0, 2.0)
_STENCIL_WEIGHTS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0


def relative_error(analytic, numeric, floor=1e-6) -> np.ndarray:
    """Entrywise ``|a - n| / max(|a|, |n|, floor)``; the floor makes tiny entries compare absolutely."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _random_instance(dims, kind, use_lstm, linear_head, grid, steps, rng):
    seed = int(rng.integers(2**31))
    model = init_model(dims, kind, use_lstm, seed, linear_head)
    model.theta += 0.3 * rng.standard_normal(model.theta.shape)
    X = rng.standard_normal((steps, grid[0] * grid[1], dims.K))
    state = LstmState(0.5 * rng.standard_normal(dims.D) if use_lstm else np.zeros(dims.D),
                      0.5 * rng.standard_normal(dims.D) if use_lstm else np.zeros(dims.D))
    weights = rng.standard_normal(steps)
    return model, X, state, weights


def gradcheck_model(dims: ModelDims = ModelDims(4, 5, 6), seed: int = 0, kind=NormalizerKind.SPARSE,
                    grid=(3, 3), steps: int = 3, use_lstm: bool = True, linear_head: bool = False,
                    loss_weight: float = 1.0, eps: float = 1e-4, tol: float = 1e-4,
                    max_resamples: int = 50, flip_sign: bool = False) -> GradcheckReport:
    """Finite-difference check of every parameter gradient over a short unrolled window.

    Numeric gradients use the fourth-order central stencil with step ``eps``.

    The loss is ``loss_weight * sum_t w_t * y_t`` with random ``w_t``. For
    sparsemax, instances whose attention support changes under any of the
    perturbations are discarded and redrawn. ``flip_sign`` corrupts the
    analytic gradient and exists to exercise the failure path.
    """
    kind = NormalizerKind(kind)
    rng = np.random.default_rng(seed)
    for resample in range(max_resamples + 1):
        model, X, state, weights = _random_instance(dims, kind, use_lstm, linear_head, grid, steps, rng)
        weights = loss_weight * weights
        ws = _Workspace(model, X.shape[1], steps)
        ws.forward(X, state.h, state.c)
        base_support = ws.P[:steps] > 0
        grad = ModelParams(model.dims, model.kind, model.use_lstm, model.linear_head)
        ws.backward(weights, grad)
        analytic = -grad.theta if flip_sign else grad.theta.copy()

        numeric = np.zeros_like(model.theta)
        stable = True
        for j in range(model.theta.size):
            orig = model.theta[j]
            vals = []
            for delta in _STENCIL_OFFSETS:
                model.theta[j] = orig + delta * eps
                vals.append(float(weights @ ws.forward(X, state.h, state.c)))
                if kind is NormalizerKind.SPARSE and not np.array_equal(ws.P[:steps] > 0, base_support):
                    stable = False
            model.theta[j] = orig
            numeric[j] = _STENCIL_WEIGHTS @ vals / eps
            if not stable:
                break
        if stable:
            break
    else:
        raise RuntimeError("could not draw a support-stable instance")

    errors = relative_error(analytic, numeric)
    block_errors, offset = {}, 0
    for name, shape in model.layout:
        n = int(np.prod(shape))
        block_errors[name] = float(errors[offset:offset + n].max()) if n else 0.0
        offset += n
    return GradcheckReport(kind, float(errors.max()) if errors.size else 0.0, block_errors, tol, resample)
