"""Versioned binary container for parameter stores, routers and regularizer state.

Layout (all integers little-endian)::

    b"PWSNAP" | u16 version | u32 header_len | header (UTF-8 JSON, sorted keys)
    | array payloads, concatenated in header order

Each array is described in the header by name, dtype (``<f8`` or ``<i8``) and
shape. Output is a pure function of the inputs, so equal objects give equal bytes.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ContractError

MAGIC = b"PWSNAP"
VERSION = 1
_DTYPES = {"f": "<f8", "i": "<i8", "u": "<i8", "b": "<i8"}


def dumps(kind: str, meta: dict, arrays: dict) -> bytes:
    specs, blobs = [], []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        dt = _DTYPES.get(arr.dtype.kind)
        if dt is None:
            raise ContractError(f"unsupported dtype {arr.dtype} for {name!r}")
        data = np.asarray(arr, dtype=dt, order="C")  # ascontiguousarray would promote 0-d to 1-d
        specs.append({"name": name, "dtype": dt, "shape": list(data.shape)})
        blobs.append(data.tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "arrays": specs},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HI", VERSION, len(header)) + header + b"".join(blobs)


def loads(blob: bytes, kind: str = None):
    """Return ``(kind, meta, arrays)``; checks ``kind`` when given."""
    if blob[:len(MAGIC)] != MAGIC:
        raise ContractError("not a snapshot container")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<HI", blob, off)
    if version != VERSION:
        raise ContractError(f"unsupported snapshot version {version}")
    off += struct.calcsize("<HI")
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    if kind is not None and header["kind"] != kind:
        raise ContractError(f"expected a {kind!r} snapshot, found {header['kind']!r}")
    arrays = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=spec["dtype"], count=count, offset=off)
        native = np.float64 if spec["dtype"] == "<f8" else np.int64
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(native)
        off += count * 8
    if off != len(blob):
        raise ContractError("trailing bytes in snapshot")
    return header["kind"], header["meta"], arrays
