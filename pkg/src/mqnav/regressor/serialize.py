"""Binary model format.

Layout: ``MAGIC`` (8 bytes), format version (uint16 LE), header length
(uint32 LE), UTF-8 JSON header, then every array as little-endian float64
in header order (normalization mean and std, then W and b per parametric
layer).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from mqnav.errors import ArtifactIOError, ValidationError
from mqnav.regressor.layers import layer_from_descriptor
from mqnav.regressor.model import Normalization, RegressorModel

MAGIC = b"MQNMODEL"
VERSION = 1
_F64 = np.dtype("<f8")


def dumps(model: RegressorModel) -> bytes:
    header = {
        "format": "mqnav-regressor",
        "window": model.window,
        "in_channels": model.in_channels,
        "target": model.target,
        "seed": model.seed,
        "label_mean": model.norm.label_mean,
        "label_scale": model.norm.label_scale,
        "layers": model.descriptors(),
        "n_params": model.n_params(),
        "meta": model.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = [model.norm.mean, model.norm.std, *model.get_params()]
    body = b"".join(np.ascontiguousarray(a, dtype=_F64).tobytes() for a in arrays)
    return MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob + body


def loads(data: bytes) -> RegressorModel:
    try:
        return _loads(data)
    except (ValueError, KeyError, TypeError, struct.error) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"corrupt model payload: {exc}") from exc


def _loads(data: bytes) -> RegressorModel:
    if data[: len(MAGIC)] != MAGIC:
        raise ValidationError("not a serialized regressor (bad magic)")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<HI", data, off)
    if version != VERSION:
        raise ValidationError(f"unsupported model format version {version}")
    off += struct.calcsize("<HI")
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    layers = [layer_from_descriptor(d) for d in header["layers"]]
    c = header["in_channels"]

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype=_F64, count=n, offset=off).reshape(shape).astype(float)
        off += n * _F64.itemsize
        return arr

    mean, std = take((c,)), take((c,))
    norm = Normalization(mean, std, header["label_mean"], header["label_scale"])
    model = RegressorModel(layers, header["window"], c, header["target"], header["seed"], norm, header["meta"])
    for layer in model.parametric_layers():
        for key in ("W", "b"):
            layer.params[key][...] = take(layer.params[key].shape)
    if off != len(data):
        raise ValidationError("trailing bytes after model payload")
    if model.n_params() != header["n_params"]:
        raise ValidationError("parameter count does not match header")
    return model


def save(model: RegressorModel, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(dumps(model))
        os.replace(tmp, path)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write model to {path}: {exc}") from exc
    return path


def load(path) -> RegressorModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read model {path}: {exc}") from exc
    return loads(data)
