"""Single-file checkpoints of named float64 arrays plus a JSON metadata block.

Layout (all integers little-endian)::

    magic  b"BOEDCKPT"
    u32    format version
    u64    metadata length, then UTF-8 JSON metadata
    u32    array count
    per array:
        u32 name length, UTF-8 name
        u32 rank, rank x u64 dims
        float64 data, C order, little-endian
"""

from __future__ import annotations

import json
import os
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

from boedrl.errors import CheckpointError
from boedrl.nn.tensor import Array

MAGIC = b"BOEDCKPT"
FORMAT_VERSION = 1

_LE_FLOAT = np.dtype("<f8")


@dataclass(frozen=True)
class Checkpoint:
    meta: dict[str, Any]
    arrays: dict[str, Array]

    def group(self, prefix: str) -> dict[str, Array]:
        """Arrays under ``prefix.``, with the prefix stripped."""
        head = f"{prefix}."
        return {
            name[len(head) :]: value
            for name, value in self.arrays.items()
            if name.startswith(head)
        }


def _write_block(handle: BinaryIO, fmt: str, *values: int) -> None:
    handle.write(struct.pack(fmt, *values))


def write_checkpoint(
    path: str | Path, meta: Mapping[str, Any], arrays: Mapping[str, Array]
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(dict(meta), sort_keys=True).encode("utf-8")
    partial = path.with_suffix(path.suffix + ".partial")
    with partial.open("wb") as handle:
        handle.write(MAGIC)
        _write_block(handle, "<I", FORMAT_VERSION)
        _write_block(handle, "<Q", len(payload))
        handle.write(payload)
        _write_block(handle, "<I", len(arrays))
        for name in sorted(arrays):
            value = np.ascontiguousarray(arrays[name], dtype=_LE_FLOAT)
            encoded = name.encode("utf-8")
            _write_block(handle, "<I", len(encoded))
            handle.write(encoded)
            _write_block(handle, "<I", value.ndim)
            _write_block(handle, f"<{value.ndim}Q", *value.shape)
            handle.write(value.tobytes(order="C"))
    os.replace(partial, path)
    return path


def _read_exact(handle: BinaryIO, size: int, what: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return data


def _read_int(handle: BinaryIO, fmt: str, what: str) -> int:
    return int(struct.unpack(fmt, _read_exact(handle, struct.calcsize(fmt), what))[0])


def read_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        handle = path.open("rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc.strerror}") from exc
    with handle:
        if _read_exact(handle, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint")
        version = _read_int(handle, "<I", "version")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        meta_len = _read_int(handle, "<Q", "metadata length")
        try:
            meta = json.loads(_read_exact(handle, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError("corrupt checkpoint metadata") from exc
        arrays: dict[str, Array] = {}
        for _ in range(_read_int(handle, "<I", "array count")):
            name = _read_exact(handle, _read_int(handle, "<I", "name length"), "name").decode()
            rank = _read_int(handle, "<I", f"{name} rank")
            dims = struct.unpack(f"<{rank}Q", _read_exact(handle, 8 * rank, f"{name} shape"))
            count = int(np.prod(dims, dtype=np.int64))
            raw = _read_exact(handle, 8 * count, f"{name} data")
            arrays[name] = np.frombuffer(raw, dtype=_LE_FLOAT).astype(np.float64).reshape(dims)
        if handle.read(1):
            raise CheckpointError("trailing bytes after the last array")
    return Checkpoint(meta, arrays)
