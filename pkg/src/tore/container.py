"""Versioned binary container for datasets and checkpoints.

Layout: 5-byte magic ``TORE1``, uint64 little-endian manifest length, JSON
manifest, then a raw little-endian float32 blob.  The manifest lists array
names, shapes and byte offsets into the blob plus a free-form ``meta`` dict.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"TORE1"


def save_container(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        # note: ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.asarray(arr, dtype="<f4", order="C")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "<f4",
            "offset": offset,
        })
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    manifest = json.dumps(
        {"arrays": entries, "meta": meta or {}},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint64(len(manifest)).tobytes())
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise ValueError(f"{path}: not a container file (bad magic)")
    mlen = int(np.frombuffer(data[5:13], dtype="<u8")[0])
    manifest = json.loads(data[13 : 13 + mlen])
    base = 13 + mlen
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        arr = np.frombuffer(data, dtype=entry["dtype"], count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).copy()
    return arrays, manifest["meta"]
