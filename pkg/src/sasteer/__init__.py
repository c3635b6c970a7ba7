"""Aggregated sparse-attention sequence regression for steering prediction."""

__version__ = "0.1.0"

from .attention import AttentionMap, AttentionParams, FeatureCube, NormalizerKind
from .data import CueMode, GeneratorConfig, Sequence, align_delay, generate_sequence, read_dataset, write_dataset
from .ensemble import DataMode, Ensemble, aggregate_predict, attention_correlation, sparsity_stats, train_ensemble
from .pipeline import ModelDims, ModelParams, TrainConfig, fit, init_model, predict_sequence, train
from .simplex import softmax, sparsemax
