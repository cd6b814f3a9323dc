"""Binary checkpoint container for model graphs and parameters.

File layout:

    bytes 0..3    magic ``SGFI``
    bytes 4..7    format version, little-endian uint32 (currently 1)
    bytes 8..15   JSON header length, little-endian uint64
    ...           JSON header (sorted keys, compact separators)
    ...           raw tensor payload

The header carries the architecture graph, a tensor table (name, shape,
byte offset and length into the payload) and training metadata (epoch,
optimizer kind, seed).  Tensors are stored as little-endian 32-bit
floats in graph parameter-slot order and widened to 64-bit on load.
Because the header serialization is deterministic and metadata is
preserved, save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sgfi.arch import ArchSpec, check_params

MAGIC = b"SGFI"
VERSION = 1


@dataclass
class Checkpoint:
    """An architecture, its parameters, and training metadata."""

    spec: ArchSpec
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def _tensor_table(spec: ArchSpec) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, shape) for name, shape in spec.param_slots()]


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    """Write a checkpoint; every graph slot must have a parameter."""
    spec, params = checkpoint.spec, checkpoint.params
    check_params(spec, params)
    table = []
    payload = bytearray()
    for name, shape in _tensor_table(spec):
        value = params[name]
        arr = value if isinstance(value, np.ndarray) else value.data
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(shape),
                      "offset": len(payload), "length": len(raw)})
        payload.extend(raw)
    header = {
        "arch": spec.to_json_dict(),
        "tensors": table,
        "meta": checkpoint.meta,
    }
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint, validating format and tensor table."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, not a checkpoint")
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated checkpoint header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header_end = 16 + header_len
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[16:header_end].decode("utf-8"))
    spec = ArchSpec.from_json_dict(header["arch"])

    expected = _tensor_table(spec)
    table = header["tensors"]
    if len(table) != len(expected):
        raise ValueError(
            f"{path}: tensor table mismatch: {len(table)} entries for "
            f"{len(expected)} parameter slots")
    payload = raw[header_end:]
    params = {}
    for entry, (name, shape) in zip(table, expected):
        if entry["name"] != name or tuple(entry["shape"]) != shape:
            raise ValueError(
                f"{path}: tensor table mismatch: entry "
                f"{entry['name']}{tuple(entry['shape'])} where "
                f"{name}{shape} was expected")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if entry["length"] != 4 * count:
            raise ValueError(
                f"{path}: tensor table mismatch: {name} declares "
                f"{entry['length']} bytes for {count} elements")
        lo, hi = entry["offset"], entry["offset"] + entry["length"]
        if lo < 0 or hi > len(payload):
            raise ValueError(f"{path}: truncated tensor data for {name}")
        data = np.frombuffer(payload[lo:hi], dtype="<f4")
        params[name] = data.astype(np.float64).reshape(shape)
    return Checkpoint(spec=spec, params=params, meta=header.get("meta", {}))
