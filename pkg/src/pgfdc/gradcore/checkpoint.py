"""Binary parameter container.

Layout::

    b"PGFDCKPT"                 8-byte magic
    uint32 LE                   format version
    uint64 LE                   header length in bytes
    header                      UTF-8 JSON {"version", "entries": [{name, shape, offset, count}], "meta"}
    payload                     concatenated little-endian float64 arrays
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"PGFDCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.array(params[name], dtype="<f8", order="C")  # keeps 0-d shapes
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"version": FORMAT_VERSION, "entries": entries, "meta": meta or {}}, sort_keys=True
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        version, hlen = struct.unpack_from("<IQ", raw, 8)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = 8 + struct.calcsize("<IQ")
    try:
        header = json.loads(raw[start : start + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = raw[start + hlen :]
    params = {}
    for e in header["entries"]:
        nbytes = 8 * e["count"]
        chunk = payload[e["offset"] : e["offset"] + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: payload truncated at {e['name']}")
        params[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(tuple(e["shape"])).astype(np.float64)
    return params, header.get("meta", {})
