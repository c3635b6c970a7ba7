"""Checkpoints (versioned JSON text), attention-map PGM images and CSV tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .attention import AttentionMap, NormalizerKind
from .ensemble import DataMode, Ensemble
from .errors import FormatError, InvalidInputError, UnsupportedVersionError
from .pipeline import ModelDims, ModelParams

CHECKPOINT_FORMAT = "sasteer-checkpoint"
CHECKPOINT_VERSION = 1


def _model_to_dict(model: ModelParams) -> dict:
    return {
        "kind": model.kind.value,
        "use_lstm": model.use_lstm,
        "linear_head": model.linear_head,
        "seed": model.seed,
        "dims": {"K": model.dims.K, "D": model.dims.D, "H": model.dims.H},
        # json writes floats with repr(), which round-trips float64 exactly
        "params": {name: {"shape": list(shape), "values": model[name].ravel().tolist()}
                   for name, shape in model.layout},
    }


def _model_from_dict(doc: dict) -> ModelParams:
    try:
        dims = ModelDims(int(doc["dims"]["K"]), int(doc["dims"]["D"]), int(doc["dims"]["H"]))
        model = ModelParams(dims, NormalizerKind(doc["kind"]), bool(doc["use_lstm"]),
                            bool(doc["linear_head"]), doc.get("seed"))
        params = doc["params"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model entry: {exc}") from None
    if set(params) != {name for name, _ in model.layout}:
        raise FormatError(f"parameter blocks {sorted(params)} do not match the declared architecture")
    for name, shape in model.layout:
        block = params[name]
        values = np.asarray(block["values"], dtype=np.float64)
        if tuple(block["shape"]) != shape or values.size != int(np.prod(shape)):
            raise FormatError(f"block {name} has shape {block['shape']}, expected {list(shape)}")
        model[name][...] = values.reshape(shape)
    return model


def write_checkpoint(obj, path) -> None:
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION}
    if isinstance(obj, ModelParams):
        doc["type"] = "model"
        doc["model"] = _model_to_dict(obj)
    elif isinstance(obj, Ensemble):
        doc["type"] = "ensemble"
        doc["mode"] = obj.mode.value
        doc["member_sequences"] = obj.member_sequences
        doc["members"] = [_model_to_dict(m) for m in obj.members]
    else:
        raise InvalidInputError(f"cannot checkpoint {type(obj).__name__}")
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_checkpoint(path):
    """Returns a :class:`ModelParams` or an :class:`Ensemble`."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("not a sasteer checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {doc.get('version')!r}")
    kind = doc.get("type")
    if kind == "model":
        return _model_from_dict(doc["model"])
    if kind == "ensemble":
        members = [_model_from_dict(m) for m in doc["members"]]
        try:
            return Ensemble(members, DataMode(doc["mode"]), doc.get("member_sequences", []))
        except InvalidInputError as exc:
            raise FormatError(str(exc)) from None
    raise FormatError(f"unknown checkpoint type {kind!r}")


def attention_pixels(amap: AttentionMap) -> np.ndarray:
    """8-bit ``(M, N)`` image scaled so the largest weight is 255; flat maps render 128."""
    w = np.asarray(amap.weights, dtype=np.float64)
    if np.all(w == w[0]):
        pixels = np.full(w.shape, 128, dtype=np.uint8)
    else:
        top = w.max()
        pixels = np.floor(w * 255.0 / top).clip(0, 255).astype(np.uint8)
        pixels[w == top] = 255
    return pixels.reshape(amap.grid_shape)


def export_attention_pgm(amap: AttentionMap, path) -> None:
    pixels = attention_pixels(amap)
    rows, cols = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    cols, rows = (int(x) for x in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8)
    if data.size != rows * cols:
        raise FormatError("PGM pixel count does not match header")
    return data.reshape(rows, cols)


def fmt(x) -> str:
    """CSV number format: 9 significant digits."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
