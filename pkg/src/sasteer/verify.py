"""Finite-difference and oracle checks behind ``sasteer gradcheck``.

Every check returns a :class:`CheckResult` with the worst error seen over
its random instances, so a caller can print one line per check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import NormalizerKind
from .nn import DenseLayer, LstmParams, LstmState, dense_backward, dense_forward, lstm_backward, lstm_step
from .pipeline import _STENCIL_OFFSETS, _STENCIL_WEIGHTS, ModelDims, gradcheck_model, relative_error
from .simplex import oracle_simplex_projection, softmax, softmax_jvp, sparsemax, sparsemax_jvp


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28} max_err={self.max_error:.3e} tol={self.tolerance:.0e} n={self.instances}"


def numeric_gradient(f, x, eps=1e-4):
    """Fourth-order central differences of scalar ``f`` at ``x`` (``x`` is restored afterwards)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        vals = []
        for offset in _STENCIL_OFFSETS:
            flat[i] = orig + offset * eps
            vals.append(f())
        flat[i] = orig
        gflat[i] = _STENCIL_WEIGHTS @ vals / eps
    return grad


def _vec_rel(a, n, floor=1e-8):
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def check_oracle(rng, count=500, tol=1e-9) -> CheckResult:
    worst = 0.0
    for _ in range(count):
        z = rng.standard_normal(int(rng.integers(2, 7)))
        worst = max(worst, float(np.max(np.abs(sparsemax(z) - oracle_simplex_projection(z)))))
    return CheckResult("sparsemax-vs-oracle", worst, tol, count)


def check_sparsemax_jvp(rng, count=20, n=8, eps=1e-5, tol=1e-4) -> CheckResult:
    worst, done = 0.0, 0
    while done < count:
        z, v = rng.standard_normal(n), rng.standard_normal(n)
        hi, lo = sparsemax(z + eps * v), sparsemax(z - eps * v)
        base = sparsemax(z) > 0
        if not (np.array_equal(hi > 0, base) and np.array_equal(lo > 0, base)):
            continue  # a support boundary lies inside the stencil
        worst = max(worst, _vec_rel(sparsemax_jvp(z, v), (hi - lo) / (2 * eps)))
        done += 1
    return CheckResult("sparsemax-jvp", worst, tol, count)


def check_softmax_jvp(rng, count=20, n=8, eps=1e-6, tol=1e-6) -> CheckResult:
    worst = 0.0
    for _ in range(count):
        z, v = rng.standard_normal(n), rng.standard_normal(n)
        fd = (softmax(z + eps * v) - softmax(z - eps * v)) / (2 * eps)
        worst = max(worst, _vec_rel(softmax_jvp(z, v), fd))
    return CheckResult("softmax-jvp", worst, tol, count)


def check_dense(rng, count=20, tol=1e-6, flip_sign=False) -> CheckResult:
    worst = 0.0
    for _ in range(count):
        n_in, n_out = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        layer = DenseLayer(rng.standard_normal((n_out, n_in)), rng.standard_normal(n_out))
        x, u = rng.standard_normal(n_in), rng.standard_normal(n_out)
        gW, gb, gx = dense_backward(layer, x, u)
        if flip_sign:
            gW = -gW
        loss = lambda: float(u @ dense_forward(layer, x))
        for analytic, target in ((gW, layer.W), (gb, layer.b), (gx, x)):
            worst = max(worst, float(relative_error(analytic, numeric_gradient(loss, target)).max()))
    return CheckResult("dense-backward", worst, tol, count)


def check_lstm(rng, count=20, input_size=8, hidden=4, tol=1e-5) -> CheckResult:
    worst = 0.0
    for _ in range(count):
        params = LstmParams.init(input_size, hidden, rng)
        params.W += 0.3 * rng.standard_normal(params.W.shape)
        params.b += 0.3 * rng.standard_normal(params.b.shape)
        x = rng.standard_normal(input_size)
        state = LstmState(rng.standard_normal(hidden), rng.standard_normal(hidden))
        wh, wc = rng.standard_normal(hidden), rng.standard_normal(hidden)

        def loss():
            new, _ = lstm_step(params, x, state)
            return float(wh @ new.h + wc @ new.c)

        _, cache = lstm_step(params, x, state)
        grads, gx, gprev = lstm_backward(params, cache, wh, wc)
        pairs = ((grads.W, params.W), (grads.b, params.b), (gx, x), (gprev.h, state.h), (gprev.c, state.c))
        for analytic, target in pairs:
            worst = max(worst, float(relative_error(analytic, numeric_gradient(loss, target)).max()))
    return CheckResult("lstm-backward", worst, tol, count)


def check_pipeline(kind, seed=0, count=20, tol=1e-4, flip_sign=False) -> CheckResult:
    kind = NormalizerKind(kind)
    worst = 0.0
    for i in range(count):
        report = gradcheck_model(ModelDims(4, 5, 6), seed=seed * 1000 + i, kind=kind, tol=tol, flip_sign=flip_sign)
        worst = max(worst, report.max_rel_error)
    return CheckResult(f"pipeline-{kind.value}", worst, tol, count)


def run_suite(seed=0, kinds=tuple(NormalizerKind), count=20, flip_sign=False) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [
        check_oracle(rng),
        check_sparsemax_jvp(rng, count),
        check_softmax_jvp(rng, count),
        check_dense(rng, count, flip_sign=flip_sign),
        check_lstm(rng, count),
    ]
    results += [check_pipeline(k, seed, count, flip_sign=flip_sign) for k in kinds]
    return results
