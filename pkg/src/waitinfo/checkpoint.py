"""Checkpoint container.

Layout::

    WAITINFO-CKPT <version>\\n
    <one-line JSON header>\\n
    <raw little-endian float64 arrays, concatenated in header order>

The header holds ``config`` (ModelConfig fields), ``params`` (a list of
``{"name", "shape"}`` in storage order, which is the model's parameter
order) and optional ``frequency`` token counts for the frequency provider.
"""

from __future__ import annotations

import json

import numpy as np

from .model import InfoTransformer, ModelConfig

MAGIC = b"WAITINFO-CKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: InfoTransformer, path, extra: dict | None = None) -> None:
    header = {
        "config": model.config.to_dict(),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    if model.src_frequency is not None and model.tgt_frequency is not None:
        header["frequency"] = {
            "src": {str(k): v for k, v in sorted(model.src_frequency.counts.items())},
            "tgt": {str(k): v for k, v in sorted(model.tgt_frequency.counts.items())},
        }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" " + str(VERSION).encode() + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def read_header(path) -> tuple[dict, int]:
    """Return the parsed header and the byte offset of the parameter block."""
    with open(path, "rb") as fh:
        first = fh.readline()
        parts = first.strip().split(b" ")
        if len(parts) != 2 or parts[0] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        try:
            version = int(parts[1])
        except ValueError:
            raise CheckpointError(f"{path}: unreadable version {parts[1]!r}") from None
        if version != VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from None
        return header, fh.tell()


def load_checkpoint(path) -> InfoTransformer:
    header, offset = read_header(path)
    model = InfoTransformer(ModelConfig.from_dict(header["config"]))
    with open(path, "rb") as fh:
        fh.seek(offset)
        blob = fh.read()
    expected = [(p["name"], tuple(p["shape"])) for p in header["params"]]
    if [(k, v.shape) for k, v in model.params.items()] != expected:
        raise CheckpointError(f"{path}: parameter layout does not match its config")
    pos = 0
    for name, shape in expected:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated parameter block at {name}")
        model.params[name].data = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    freq = header.get("frequency")
    if freq:
        model.set_frequency_tables({int(k): v for k, v in freq["src"].items()},
                                   {int(k): v for k, v in freq["tgt"].items()})
    return model
