"""Self-describing binary container for named float64 tensors.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(metadata plus a name/shape/dtype table sorted by name), then the raw
little-endian float64 payloads in table order. Loading returns the exact
bytes that were saved, so save/load round-trips are bit-exact.
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SQZTNSR1"


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = sorted(tensors)
    table = []
    payloads = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name]).astype("<f8", copy=False)
        table.append({"name": name, "shape": list(arr.shape), "dtype": "<f8"})
        payloads.append(arr.tobytes())
    header = json.dumps({"meta": meta or {}, "tensors": table},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for p in payloads:
            f.write(p)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a tensor container (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated payload for {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return tensors, header["meta"]
