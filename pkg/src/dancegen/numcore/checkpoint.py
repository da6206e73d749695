"""Parameter checkpoint files.

A checkpoint is a directory holding ``manifest.json`` (names, shapes, dtype,
byte offsets, free-form metadata) and ``tensors.bin``, the raw little-endian
float64 blobs of every tensor concatenated in manifest order.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any

import numpy as np

MANIFEST = "manifest.json"
BLOB = "tensors.bin"
FORMAT = "dancegen-tensors"
DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


def save_tensors(path: str | os.PathLike, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / BLOB, "wb") as fh:
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype=DTYPE)  # tobytes() is C-ordered; keeps 0-d shapes
            raw = a.tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    manifest = {"format": FORMAT, "version": 1, "dtype": "float64-le", "tensors": entries, "meta": meta or {}}
    with open(path / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_tensors(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    try:
        with open(path / MANIFEST, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"no manifest in {path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest {path / MANIFEST}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path / MANIFEST} is not a {FORMAT} manifest")
    try:
        blob = (path / BLOB).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing tensor blob {path / BLOB}") from exc

    out: dict[str, np.ndarray] = {}
    expected = 0
    try:
        for e in manifest["tensors"]:
            shape = tuple(int(s) for s in e["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * 8
            off = int(e["offset"])
            if nbytes != int(e["nbytes"]) or off != expected:
                raise CheckpointError(f"inconsistent manifest entry for {e['name']!r}")
            if off + nbytes > len(blob):
                raise CheckpointError(f"tensor blob truncated at {e['name']!r} ({len(blob)} bytes)")
            out[e["name"]] = np.frombuffer(blob, dtype=DTYPE, count=nbytes // 8, offset=off).reshape(shape).astype(np.float64)
            expected = off + nbytes
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt manifest {path / MANIFEST}: {exc!r}") from exc
    if expected != len(blob):
        raise CheckpointError(f"tensor blob has {len(blob) - expected} trailing bytes")
    return out, manifest.get("meta", {})
