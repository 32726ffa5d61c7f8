"""Tiny versioned binary container: a JSON header followed by raw
little-endian array payloads. Used for checkpoints, embedding stores and
index dumps; byte-identical for identical content (no timestamps).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"EQSC0001"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4"}


def write_container(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest = []
    payloads = []
    for name, arr in arrays.items():
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise ValueError(f"unsupported dtype {dtype_name} for array {name}")
        data = np.ascontiguousarray(arr).astype(_DTYPES[dtype_name], copy=False).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype_name,
                         "nbytes": len(data)})
        payloads.append(data)
    head = json.dumps({"header": header, "arrays": manifest}, sort_keys=True,
                      ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for data in payloads:
            fh.write(data)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a container file")
        head_len = int.from_bytes(fh.read(8), "little")
        head = json.loads(fh.read(head_len).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for entry in head["arrays"]:
            raw = fh.read(entry["nbytes"])
            arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]])
            arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return head["header"], arrays
