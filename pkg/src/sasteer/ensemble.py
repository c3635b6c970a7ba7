"""Aggregated models: N randomly initialized members whose predictions are averaged.

Also the diagnostics used to compare ensembles: per-member vs aggregate
error, pairwise correlation of the members' attention maps and attention
sparsity.
"""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .pipeline import ModelParams, PredictionTrace, TrainConfig, fit, predict_sequence


class DataMode(enum.Enum):
    SAME = "same"  # every member sees the full training set (ASA)
    BOOTSTRAP = "bootstrap"  # each member gets its own resample of whole sequences (ASAR)


@dataclass
class Ensemble:
    members: list
    mode: DataMode = DataMode.SAME
    member_sequences: list = field(default_factory=list)  # training sequence ids per member

    def __post_init__(self):
        if not self.members:
            raise InvalidInputError("an ensemble needs at least one member")
        first = self.members[0]
        for m in self.members[1:]:
            if not first.same_architecture(m):
                raise InvalidInputError("ensemble members must share one architecture")
        self.mode = DataMode(self.mode)

    def __len__(self):
        return len(self.members)


def bootstrap_indices(n_sequences: int, seed: int) -> np.ndarray:
    """Seeded resample of whole sequences, with replacement, same count."""
    return np.random.default_rng([seed, 2]).integers(0, n_sequences, size=n_sequences)


def _fit_member(args):
    train_seqs, valid_seqs, config = args
    model, _ = fit(train_seqs, valid_seqs, config)
    return model


def train_ensemble(n: int, base_config: TrainConfig, seeds, train_seqs, valid_seqs,
                   mode=DataMode.SAME, workers: int = 1) -> Ensemble:
    """Train ``n`` members that differ only in seed (and, for BOOTSTRAP, in their resampled data)."""
    seeds = [int(s) for s in seeds]
    mode = DataMode(mode)
    if len(seeds) != n or n < 1:
        raise InvalidInputError(f"need exactly n={n} seeds, got {len(seeds)}")
    if len(set(seeds)) != n:
        raise InvalidInputError(f"seeds must be distinct, got {seeds}")
    if not train_seqs:
        raise InvalidInputError("no training sequences")

    jobs, used = [], []
    for seed in seeds:
        member_train = list(train_seqs)
        if mode is DataMode.BOOTSTRAP:
            member_train = [train_seqs[i] for i in bootstrap_indices(len(train_seqs), seed)]
        used.append([s.id for s in member_train])
        jobs.append((member_train, valid_seqs, replace(base_config, seed=seed)))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_fit_member, jobs))
    else:
        members = [_fit_member(job) for job in jobs]
    return Ensemble(members, mode, used)


@dataclass
class EnsembleTrace(PredictionTrace):
    member_predictions: np.ndarray = None  # (n, T')
    member_maps: np.ndarray = None  # (n, T', M*N)

    def member_mae(self, i) -> float:
        return float(np.mean(np.abs(self.member_predictions[i] - self.targets)))


def aggregate_predict(ens: Ensemble, seq, delay_frames: int = 0) -> EnsembleTrace:
    """Per-frame mean of the members' predictions; member traces are kept for analysis."""
    traces = [predict_sequence(m, seq, delay_frames) for m in ens.members]
    preds = np.stack([t.predictions for t in traces])
    maps = np.stack([t.maps for t in traces])
    first = traces[0]
    return EnsembleTrace(preds.mean(axis=0), first.targets, maps.mean(axis=0), first.grid_shape,
                         delay_frames, None, preds, maps)


@dataclass
class CorrelationMatrix:
    values: np.ndarray  # (n, n)
    degenerate: np.ndarray  # (n,) bool: member's map stream had zero variance

    @property
    def warning(self) -> bool:
        return bool(self.degenerate.any())

    def mean_off_diagonal(self) -> float:
        n = self.values.shape[0]
        return float(self.values[~np.eye(n, dtype=bool)].mean())


def map_stream_correlation(streams) -> CorrelationMatrix:
    """Pearson coefficients between flattened map streams, one row per member.

    A zero-variance stream correlates 0 with every other stream; the diagonal
    is always 1.
    """
    streams = np.asarray(streams, dtype=np.float64)
    n = streams.shape[0]
    centered = streams - streams.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", centered, centered))
    degenerate = norms == 0
    safe = np.where(degenerate, 1.0, norms)
    unit = centered / safe[:, None]
    values = np.clip(unit @ unit.T, -1.0, 1.0)
    values[degenerate, :] = 0.0
    values[:, degenerate] = 0.0
    values = 0.5 * (values + values.T)
    values[np.diag_indices(n)] = 1.0
    return CorrelationMatrix(values, degenerate)


def attention_correlation(ens: Ensemble, seq) -> CorrelationMatrix:
    if len(ens) < 2:
        raise InvalidInputError("correlation needs at least two members")
    if len(seq) == 0:
        raise InvalidInputError("empty sequence")
    trace = aggregate_predict(ens, seq, 0)
    return map_stream_correlation(trace.member_maps.reshape(len(ens), -1))


def sparsity_from_maps(maps) -> tuple[float, float]:
    maps = np.asarray(maps)
    mean_support = float(np.mean(np.count_nonzero(maps > 0, axis=1)))
    return mean_support, 1.0 - mean_support / maps.shape[1]


def sparsity_stats(model: ModelParams, seq) -> tuple[float, float]:
    """``(mean support size, zero fraction)`` of the model's attention maps over ``seq``."""
    if len(seq) == 0:
        raise InvalidInputError("empty sequence")
    return sparsity_from_maps(predict_sequence(model, seq, 0).maps)
