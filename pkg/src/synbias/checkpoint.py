"""SBL1 checkpoint container.

Layout: ``b"SBL1"``, a little-endian uint64 manifest length, the manifest as
UTF-8 JSON, then the raw little-endian float64 payloads back to back.  Each
manifest entry carries ``name``, ``shape`` and ``offset`` (bytes from the start
of the payload block).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"SBL1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.array(arr, dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"params": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ConfigError(f"{path}: not an SBL1 checkpoint")
    (n,) = struct.unpack("<Q", raw[4:12])
    manifest = json.loads(raw[12:12 + n].decode("utf-8"))
    base = 12 + n
    arrays = {}
    for e in manifest["params"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=start).astype(np.float64)
        arrays[e["name"]] = arr.reshape(e["shape"])
    return arrays, manifest.get("meta", {})
