"""Versioned binary checkpoints: named float64 parameter arrays with the
configs embedded as JSON.  Rescorer arrays live in their own named section
("las/" prefix) appended after the first-pass arrays.  Round trips are
bit-exact; see README "Checkpoint file" for the byte layout.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, ModelParams
from .rescorer import LasConfig, LasParams

_MAGIC = b"TEPM"
_VERSION = 1


def _write_array(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(buf) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", buf.read(2))
    name = buf.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(buf.read(8 * count), dtype="<f8").reshape(shape).copy()
    return name, arr


def save_checkpoint(path: str | Path, params: ModelParams, las: LasParams | None = None) -> None:
    config_blob = json.dumps(
        {
            "model": asdict(params.config),
            "las": asdict(las.config) if las is not None else None,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        named = list(params.items())
        las_named = [(f"las/{k}", v) for k, v in las.items()] if las is not None else []
        fh.write(struct.pack("<I", len(named) + len(las_named)))
        for name, arr in named + las_named:
            _write_array(fh, name, arr)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, LasParams | None]:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", buf.read(4))
    configs = json.loads(buf.read(blob_len).decode("utf-8"))
    (count,) = struct.unpack("<I", buf.read(4))
    main: dict[str, np.ndarray] = {}
    las_arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name, arr = _read_array(buf)
        if name.startswith("las/"):
            las_arrays[name[4:]] = arr
        else:
            main[name] = arr
    params = ModelParams(ModelConfig(**configs["model"]), main)
    las = None
    if configs["las"] is not None:
        if not las_arrays:
            raise FormatError(f"{path}: rescorer config present but no arrays")
        las = LasParams(LasConfig(**configs["las"]), las_arrays)
    return params, las
