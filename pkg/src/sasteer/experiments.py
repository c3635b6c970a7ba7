"""The headline synthetic protocol: variant comparison, delay sweep, ensemble diagnostics."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import NormalizerKind
from .data import CueMode, GeneratorConfig, generate_split
from .ensemble import Ensemble, aggregate_predict, attention_correlation, sparsity_stats
from .pipeline import TrainConfig, fit, predict_sequence

log = logging.getLogger(__name__)

# name -> (normalizer, use_lstm)
VARIANTS = {
    "sparse": (NormalizerKind.SPARSE, True),
    "soft": (NormalizerKind.SOFT, True),
    "cnn_lstm": (NormalizerKind.NONE, True),
    "cnn": (NormalizerKind.NONE, False),
}
DELAY_GRID = (0, 5, 10, 15, 20)  # 0 - 1 s at 20 Hz


@dataclass(frozen=True)
class Protocol:
    generator: GeneratorConfig = GeneratorConfig(M=7, N=7, K=16, frames=4000, cue_mode=CueMode.MOVING,
                                                 sigma=0.5, horizon=10)
    train_seeds: tuple = (100, 101, 102, 103, 104, 105)
    valid_seeds: tuple = (106,)
    test_seeds: tuple = (107,)
    model_seeds: tuple = (0, 1, 2, 3, 4)
    training: TrainConfig = TrainConfig(epochs=30, delay_frames=10)

    def split(self):
        return (generate_split(self.generator, self.train_seeds),
                generate_split(self.generator, self.valid_seeds),
                generate_split(self.generator, self.test_seeds))


@dataclass
class VariantRun:
    name: str
    models: list
    histories: list
    test_mae: list  # per model seed, at the training delay
    seconds: float = 0.0

    @property
    def median_test_mae(self) -> float:
        return float(np.median(self.test_mae))


@dataclass
class ProtocolResult:
    protocol: Protocol
    runs: dict = field(default_factory=dict)
    test: list = field(default_factory=list)


def run_variants(protocol: Protocol, names=("sparse", "soft", "cnn_lstm"), split=None) -> ProtocolResult:
    train, valid, test = split or protocol.split()
    result = ProtocolResult(protocol, test=test)
    for name in names:
        kind, use_lstm = VARIANTS[name]
        started = time.perf_counter()
        models, histories, maes = [], [], []
        for seed in protocol.model_seeds:
            cfg = replace(protocol.training, kind=kind, use_lstm=use_lstm, seed=seed)
            model, history = fit(train, valid, cfg)
            mae = float(np.mean([predict_sequence(model, s, cfg.delay_frames).mae for s in test]))
            log.info("%s seed %d test MAE %.4f", name, seed, mae)
            models.append(model)
            histories.append(history)
            maes.append(mae)
        result.runs[name] = VariantRun(name, models, histories, maes, time.perf_counter() - started)
    return result


def retrain_sweep(protocol: Protocol, name: str = "sparse", delays=DELAY_GRID, split=None,
                  reuse: VariantRun | None = None) -> dict:
    """Train one model per (delay, seed) and score it at its own delay on the test split.

    Returns ``{delay: [test MAE per model seed]}``. ``reuse`` supplies
    already-trained models for ``protocol.training.delay_frames``.
    """
    train, valid, test = split or protocol.split()
    kind, use_lstm = VARIANTS[name]
    out = {}
    for d in delays:
        if reuse is not None and d == protocol.training.delay_frames:
            out[d] = list(reuse.test_mae)
            continue
        maes = []
        for seed in protocol.model_seeds:
            cfg = replace(protocol.training, kind=kind, use_lstm=use_lstm, seed=seed, delay_frames=d)
            model, _ = fit(train, valid, cfg)
            maes.append(float(np.mean([predict_sequence(model, s, d).mae for s in test])))
        log.info("%s trained at delay %d: test MAE %s", name, d, np.round(maes, 4))
        out[d] = maes
    return out


def ensemble_of(run: VariantRun, size: int = 3) -> Ensemble:
    """The first ``size`` seeds of a variant, i.e. what train_ensemble with SAME data would produce."""
    return Ensemble(run.models[:size])


def delay_sweep(model_or_ensemble, seq, delays=DELAY_GRID) -> dict:
    """MAE at each delay for a single model or an ensemble aggregate."""
    out = {}
    for d in delays:
        if isinstance(model_or_ensemble, Ensemble):
            out[d] = aggregate_predict(model_or_ensemble, seq, d).mae
        else:
            out[d] = predict_sequence(model_or_ensemble, seq, d).mae
    return out


def ensemble_report(ens: Ensemble, seq, delays=DELAY_GRID) -> dict:
    """Per-member and aggregate MAE per delay, map correlation and sparsity."""
    rows = []
    for d in delays:
        trace = aggregate_predict(ens, seq, d)
        rows.append({"delay": d, "aggregate": trace.mae,
                     "members": [trace.member_mae(i) for i in range(len(ens))]})
    corr = attention_correlation(ens, seq) if len(ens) > 1 else None
    return {
        "mae": rows,
        "correlation": corr,
        "sparsity": [sparsity_stats(m, seq) for m in ens.members],
    }
