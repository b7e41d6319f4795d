"""Binary checkpoints: versioned JSON header plus little-endian float64 blobs.

Layout::

    8 bytes   magic  b"ORCHMOE\\0"
    4 bytes   uint32 format version (little endian)
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header (config echo, tensor table, RNG state)
    ...       float64 LE data, tensors back to back in table order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CheckpointFormatError

MAGIC = b"ORCHMOE\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _tensor_table(model) -> list:
    entries = []
    for i, layer in enumerate(model.layers):
        entries.append((f"layer{i}.w0", layer.w0.data))
        for name, p in layer.named_parameters():
            entries.append((f"layer{i}.{name}", p.data))
        override = getattr(layer, "allocation_override", None)
        if override is not None:
            entries.append((f"layer{i}.allocation_override", override))
    return entries


def encode(model, config: dict, rng_state: Optional[dict] = None, extra: Optional[dict] = None) -> bytes:
    table, blobs, offset = [], [], 0
    for name, arr in _tensor_table(model):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.size
    header = {
        "format": "orchmoe-checkpoint",
        "version": VERSION,
        "architecture": model.arch,
        "config": config,
        "rng": rng_state or {},
        "extra": extra or {},
        "tensors": table,
    }
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(blobs)


def save_checkpoint(path, model, config: dict, rng_state: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    Path(path).write_bytes(encode(model, config, rng_state, extra))


def decode(buf: bytes) -> tuple[dict, dict]:
    """Parse bytes into (header, name -> array); raises CheckpointFormatError with the byte offset."""
    if len(buf) < _PREFIX.size:
        raise CheckpointFormatError("file shorter than the fixed prefix", len(buf))
    magic, version, head_len = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointFormatError("bad magic bytes", 0)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}", 8)
    start = _PREFIX.size
    if start + head_len > len(buf):
        raise CheckpointFormatError(f"header length {head_len} runs past end of file", 12)
    try:
        header = json.loads(buf[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        pos = getattr(e, "pos", getattr(e, "start", 0))
        raise CheckpointFormatError(f"corrupt header: {e}", start + pos) from None
    data_start = start + head_len
    payload = len(buf) - data_start
    if payload % 8:
        raise CheckpointFormatError("data section is not a whole number of float64 values", data_start)
    data = np.frombuffer(buf, dtype="<f8", offset=data_start)
    tensors = {}
    for entry in header.get("tensors", []):
        off, count = int(entry["offset"]), int(entry["count"])
        if off + count > data.size:
            raise CheckpointFormatError(f"tensor {entry['name']} runs past end of data", data_start + 8 * off)
        arr = data[off : off + count].astype(np.float64).reshape(entry["shape"])
        tensors[entry["name"]] = arr
    expected = sum(int(e["count"]) for e in header.get("tensors", []))
    if expected != data.size:
        raise CheckpointFormatError(f"expected {expected} float64 values, found {data.size}", data_start)
    return header, tensors


def load_checkpoint(path) -> tuple[dict, dict]:
    return decode(Path(path).read_bytes())


def restore_into(model, tensors: dict) -> None:
    """Copy stored arrays into a freshly built model with the same layout."""
    for i, layer in enumerate(model.layers):
        layer.w0.data = tensors[f"layer{i}.w0"].copy()
        for name, p in layer.named_parameters():
            key = f"layer{i}.{name}"
            if key not in tensors:
                raise CheckpointFormatError(f"checkpoint lacks tensor {key}", 0)
            if tensors[key].shape != p.data.shape:
                raise CheckpointFormatError(f"tensor {key} has shape {tensors[key].shape}, model expects {p.data.shape}", 0)
            p.data = tensors[key].copy()
        key = f"layer{i}.allocation_override"
        if key in tensors:
            layer.allocation_override = tensors[key].copy()
