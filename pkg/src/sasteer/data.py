"""Synthetic driving sequences, delay alignment and the SASQ dataset format.

SASQ layout (all little-endian)::

    magic      4 bytes  b"SASQ"
    version    u16      1
    frames     u32
    M, N, K    u16 x 3
    rate_hz    f32
    per frame: M*N*K f32 features (row-major m, n, k), then one f32 steering
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attention import FeatureCube
from .errors import FormatError, InvalidInputError, UnsupportedVersionError

SASQ_MAGIC = b"SASQ"
SASQ_VERSION = 1
_HEADER = struct.Struct("<4sHIHHHf")


class CueMode(enum.Enum):
    STATIC = "static"
    MOVING = "moving"


@dataclass
class Sequence:
    features: np.ndarray  # (T, M, N, K)
    steering: np.ndarray  # (T,)
    frame_rate_hz: float = 20.0
    id: str = "seq"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.steering = np.clip(np.asarray(self.steering, dtype=np.float64), -1.0, 1.0)
        if self.features.ndim != 4 or min(self.features.shape[1:]) < 1:
            raise InvalidInputError(f"features must be (T, M, N, K), got {self.features.shape}")
        if self.steering.shape != (self.features.shape[0],):
            raise InvalidInputError("one steering value per frame is required")
        if not self.frame_rate_hz > 0:
            raise InvalidInputError("frame rate must be positive")

    def __len__(self):
        return self.features.shape[0]

    @property
    def grid_shape(self):
        return self.features.shape[1:3]

    @property
    def channels(self):
        return self.features.shape[3]

    def cube(self, t) -> FeatureCube:
        return FeatureCube(self.features[t])

    @property
    def frames(self):
        return [(self.cube(t), float(self.steering[t])) for t in range(len(self))]

    def flat_features(self) -> np.ndarray:
        """``(T, M*N, K)`` contiguous copy for the numeric kernels."""
        T, M, N, K = self.features.shape
        return np.ascontiguousarray(self.features.reshape(T, M * N, K))


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic stand-in for a featurized driving video.

    ``n_cues`` redundant cue locations each carry the future steering in
    channel 0 and a constant marker of height ``beacon`` in their own channel
    ``1 + r``; ``n_cues=1, beacon=0`` leaves a bare single cue.
    """

    M: int = 7
    N: int = 7
    K: int = 16
    frames: int = 4000
    frame_rate_hz: float = 20.0
    cue_mode: CueMode = CueMode.MOVING
    horizon: int = 10
    sigma: float = 0.5
    smoothing: int = 10
    n_cues: int = 3
    beacon: float = 2.0
    seed: int = 0

    def validate(self):
        if min(self.M, self.N, self.K, self.frames, self.smoothing, self.n_cues) < 1:
            raise InvalidInputError("dimensions, frame count, smoothing and n_cues must be >= 1")
        if self.horizon < 0 or self.sigma < 0 or not self.frame_rate_hz > 0:
            raise InvalidInputError("horizon and sigma must be >= 0, frame rate > 0")
        if self.beacon != 0 and self.K < 1 + self.n_cues:
            raise InvalidInputError(f"K={self.K} leaves no room for {self.n_cues} beacon channels")
        per_cue = 2 if self.cue_mode is CueMode.MOVING else 1
        if self.M * self.N < per_cue * self.n_cues:
            raise InvalidInputError("grid too small for the requested cue locations")


def cue_locations(cfg: GeneratorConfig) -> np.ndarray:
    """``(n_cues, 2)`` flat location indices: column 0 for cued value >= 0, column 1 otherwise.

    Locations are spread evenly over the grid; for StaticCue both columns agree.
    """
    R, MN = cfg.n_cues, cfg.M * cfg.N
    if cfg.cue_mode is CueMode.STATIC:
        idx = np.floor((np.arange(R) + 0.5) * MN / R).astype(int)
        return np.stack([idx, idx], axis=1)
    idx = np.floor((np.arange(2 * R) + 0.5) * MN / (2 * R)).astype(int)
    return idx.reshape(R, 2)


def _steering_walk(rng, frames, smoothing):
    steps = rng.standard_normal(frames + smoothing - 1)
    walk = np.convolve(np.cumsum(steps), np.ones(smoothing) / smoothing, mode="valid")
    lo, hi = walk.min(), walk.max()
    if hi == lo:
        return np.zeros(frames)
    return 2.0 * (walk - lo) / (hi - lo) - 1.0


def generate_sequence(cfg: GeneratorConfig, id: str | None = None) -> Sequence:
    """Deterministic synthetic sequence; values are rounded to float32 precision."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    T = cfg.frames
    steering = _steering_walk(rng, T, cfg.smoothing)
    features = cfg.sigma * rng.standard_normal((T, cfg.M * cfg.N, cfg.K))

    cued = steering[np.minimum(np.arange(T) + cfg.horizon, T - 1)]
    locs = cue_locations(cfg)
    t = np.arange(T)
    for r in range(cfg.n_cues):
        where = np.where(cued >= 0, locs[r, 0], locs[r, 1])
        features[t, where, 0] = cued
        if cfg.beacon != 0:
            features[t, where, 1 + r] = cfg.beacon

    features = features.astype(np.float32).astype(np.float64)
    steering = steering.astype(np.float32).astype(np.float64)
    return Sequence(features.reshape(T, cfg.M, cfg.N, cfg.K), steering, cfg.frame_rate_hz,
                    id or f"synthetic-{cfg.seed}")


def generate_split(cfg: GeneratorConfig, seeds) -> list[Sequence]:
    return [generate_sequence(replace(cfg, seed=s)) for s in seeds]


def delay_frames_for(delay_seconds: float, frame_rate_hz: float) -> int:
    """Nearest whole frame, halves rounded up."""
    if delay_seconds < 0:
        raise InvalidInputError("delay must be >= 0")
    return int(np.floor(delay_seconds * frame_rate_hz + 0.5))


def align_delay(seq: Sequence, delay_seconds: float):
    """Pair each input frame ``t`` with target frame ``t + d``. Returns ``(d, pairs)``."""
    d = delay_frames_for(delay_seconds, seq.frame_rate_hz)
    T = len(seq)
    if d >= T:
        raise InvalidInputError(f"delay of {d} frames leaves nothing of a {T}-frame sequence")
    t = np.arange(T - d)
    return d, np.stack([t, t + d], axis=1)


def write_dataset(seq: Sequence, path) -> None:
    T, M, N, K = seq.features.shape
    if max(M, N, K) > 0xFFFF or T > 0xFFFFFFFF:
        raise InvalidInputError("dimensions exceed the SASQ header fields")
    body = np.empty((T, M * N * K + 1), dtype="<f4")
    body[:, :-1] = seq.features.reshape(T, -1)
    body[:, -1] = seq.steering
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SASQ_MAGIC, SASQ_VERSION, T, M, N, K, seq.frame_rate_hz))
        fh.write(body.tobytes())


def read_dataset(path) -> Sequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than the SASQ header", offset=len(raw))
    magic, version, T, M, N, K, rate = _HEADER.unpack_from(raw, 0)
    if magic != SASQ_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != SASQ_VERSION:
        raise UnsupportedVersionError(f"unsupported SASQ version {version}", offset=4)
    if min(M, N, K) < 1 or not rate > 0:
        raise FormatError("invalid dimensions or frame rate in header", offset=10)
    frame_bytes = 4 * (M * N * K + 1)
    expected = _HEADER.size + T * frame_bytes
    if len(raw) < expected:
        complete = (len(raw) - _HEADER.size) // frame_bytes
        raise FormatError(f"truncated: frame {complete} of {T} is incomplete",
                          offset=_HEADER.size + complete * frame_bytes)
    if len(raw) > expected:
        raise FormatError("trailing bytes after the last frame", offset=expected)
    body = np.frombuffer(raw, dtype="<f4", count=T * (M * N * K + 1), offset=_HEADER.size)
    body = body.reshape(T, M * N * K + 1).astype(np.float64)
    return Sequence(body[:, :-1].reshape(T, M, N, K), body[:, -1], float(rate), path.stem)
