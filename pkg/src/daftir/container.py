"""Single-file binary container: JSON manifest followed by float64 blocks.

Layout::

    b"DAFTBIN\\0"                 8-byte magic
    uint64 little-endian         manifest length in bytes
    manifest                     UTF-8 JSON, keys sorted, space-padded to 8 bytes
    blocks                       raw little-endian float64, in manifest order

The manifest records ``kind``, ``version``, free-form ``meta`` and, per array,
its ``name``, ``shape`` and byte ``offset`` relative to the start of the
blocks section. Writing the same content twice produces identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

MAGIC = b"DAFTBIN\0"
_LE_F8 = np.dtype("<f8")


def write_container(path, kind: str, version: int, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=_LE_F8)
        if not np.all(np.isfinite(data)):
            raise ValueError(f"array {name!r} contains non-finite values")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blob = data.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    manifest = {"kind": kind, "version": version, "meta": meta, "arrays": entries}
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header += b" " * (-len(header) % 8)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(manifest, arrays)``; arrays come back as native float64."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataFormatError(path, 1, "not a daftir container (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(path, 1, f"corrupt manifest: {exc}") from None
    if kind is not None and manifest.get("kind") != kind:
        raise DataFormatError(path, 1, f"expected a {kind!r} container, found {manifest.get('kind')!r}")
    base = 16 + hlen
    arrays = {}
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = base + entry["offset"]
        stop = start + 8 * count
        if stop > len(raw):
            raise DataFormatError(path, 1, f"truncated block for {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=_LE_F8, count=count, offset=start)
        arrays[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return manifest, arrays
