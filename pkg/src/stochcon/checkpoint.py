"""Versioned binary checkpoint container.

Layout: magic, u16 format version, u64 header length, JSON header, then a
payload of little-endian float64 buffers. The header records the config
snapshot, step counters, RNG state, optimizer metadata, and the name,
shape, and payload offset of every array. Round trips are bitwise exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError

__all__ = ["Checkpoint", "load_checkpoint", "save_checkpoint"]

_MAGIC = b"SCCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    params: dict
    optimizer_state: dict | None
    rng_state: dict | None
    step: int
    epoch: int
    format_version: int = FORMAT_VERSION


def _flatten_state(optimizer_state: dict | None):
    """Split optimizer state into JSON metadata plus named arrays."""
    if optimizer_state is None:
        return None, {}
    arrays = {}
    meta = {"kind": optimizer_state["kind"], "step_count": optimizer_state["step_count"], "slots": {}}
    for slot, per_param in optimizer_state["slots"].items():
        meta["slots"][slot] = sorted(per_param)
        for name, arr in per_param.items():
            arrays[f"slot/{slot}/{name}"] = np.asarray(arr, dtype=np.float64)
    return meta, arrays


def save_checkpoint(path, *, config: dict, params: dict, optimizer_state: dict | None = None,
                    rng_state: dict | None = None, step: int = 0, epoch: int = 0) -> None:
    opt_meta, opt_arrays = _flatten_state(optimizer_state)
    arrays = {f"param/{name}": np.asarray(arr, dtype=np.float64) for name, arr in params.items()}
    arrays.update(opt_arrays)

    entries, offset = [], 0
    for key in sorted(arrays):
        arr = arrays[key]
        entries.append({"key": key, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8

    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "step": int(step),
        "epoch": int(epoch),
        "optimizer": opt_meta,
        "rng_state": rng_state,
        "arrays": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for key in sorted(arrays):
            fh.write(np.ascontiguousarray(arrays[key], dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()

    arrays = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        buf = payload[start:start + size * 8]
        if len(buf) != size * 8:
            raise DataError(f"{path}: truncated checkpoint payload")
        arrays[entry["key"]] = np.frombuffer(buf, dtype="<f8").reshape(entry["shape"]).copy()

    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    opt_meta = header["optimizer"]
    optimizer_state = None
    if opt_meta is not None:
        slots = {
            slot: {name: arrays[f"slot/{slot}/{name}"] for name in names}
            for slot, names in opt_meta["slots"].items()
        }
        optimizer_state = {"kind": opt_meta["kind"], "step_count": opt_meta["step_count"], "slots": slots}
    return Checkpoint(
        config=header["config"],
        params=params,
        optimizer_state=optimizer_state,
        rng_state=header["rng_state"],
        step=header["step"],
        epoch=header["epoch"],
        format_version=header["format_version"],
    )
