"""Named tensor archive: JSON header + raw little-endian float64 payload.

Layout: 8-byte little-endian uint64 header length, the UTF-8 JSON header,
then the concatenated tensor payloads. The header lists one
``{"name", "shape", "offset"}`` entry per tensor (offsets relative to the
payload start, entries sorted by name) plus an optional ``meta`` object.
Serialization is canonical, so save(load(p)) round-trips byte-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ContractError

_LEN_FMT = "<Q"
_LEN_SIZE = struct.calcsize(_LEN_FMT)


def save_archive(path: str | Path, tensors: dict[str, np.ndarray],
                 meta: dict[str, Any] | None = None) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.astype("<f8", copy=False).tobytes()
    header = {"meta": meta or {}, "tensors": entries}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack(_LEN_FMT, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    raw = Path(path).read_bytes()
    if len(raw) < _LEN_SIZE:
        raise ContractError(f"archive {path} is truncated")
    (header_len,) = struct.unpack_from(_LEN_FMT, raw)
    header_end = _LEN_SIZE + header_len
    header = json.loads(raw[_LEN_SIZE:header_end].decode("utf-8"))
    payload = raw[header_end:]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        flat = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        tensors[entry["name"]] = flat.reshape(shape).astype(np.float64, copy=True)
    return tensors, header.get("meta", {})


def archive_param_count(path: str | Path) -> int:
    """Count scalars by enumerating header entries (independent of any model)."""
    raw = Path(path).read_bytes()
    (header_len,) = struct.unpack_from(_LEN_FMT, raw)
    header = json.loads(raw[_LEN_SIZE:_LEN_SIZE + header_len].decode("utf-8"))
    total = 0
    for entry in header["tensors"]:
        n = 1
        for d in entry["shape"]:
            n *= d
        total += n
    return total
