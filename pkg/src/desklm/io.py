"""Deterministic on-disk container for named arrays plus a JSON header.

Layout (all little-endian, no timestamps, so identical content yields
identical bytes):

    bytes 0..3    magic b"DLM1"
    bytes 4..11   uint64: byte length H of the JSON header
    bytes 12..12+H  UTF-8 JSON header (sorted keys)
    remainder     raw array data, concatenated in header order

The header is ``{"format_version": 1, "meta": {...}, "arrays": [...]}``
where each array entry is ``{"name", "dtype", "shape", "offset", "nbytes"}``
with offsets relative to the start of the data section.  Supported dtypes
are "<f8" and "<i4".  Checkpoints and packed token files both use this
container; see README for the exact meta fields each writer stores.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_MAGIC = b"DLM1"
_DTYPES = {"<f8", "<i4"}


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays and a metadata dict to ``path``.

    Array insertion order is preserved; the same arrays and meta always
    produce byte-identical files.
    """
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float64:
            dtype = "<f8"
        elif arr.dtype == np.int32:
            dtype = "<i4"
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for array {name!r}")
        blob = np.ascontiguousarray(arr).astype(dtype, copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": 1,
        "meta": meta or {},
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_arrays(path) -> tuple[dict, dict]:
    """Read a container written by :func:`save_arrays`.

    Returns ``(arrays, meta)`` with arrays in file order.
    """
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a DLM1 array file")
    header_len = int.from_bytes(raw[4:12], "little")
    header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    if header.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported format_version {header.get('format_version')}")
    data = raw[12 + header_len:]
    arrays = {}
    for ent in header["arrays"]:
        if ent["dtype"] not in _DTYPES:
            raise ValueError(f"{path}: unsupported dtype {ent['dtype']}")
        blob = data[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(blob, dtype=ent["dtype"]).reshape(ent["shape"]).copy()
        arrays[ent["name"]] = arr
    return arrays, header["meta"]


def canonical_json(obj) -> str:
    """Serialize ``obj`` deterministically (sorted keys, repr floats)."""
    return json.dumps(obj, sort_keys=True, indent=2)
