"""Binary container for named float64 arrays plus a JSON header.

Layout (little endian)::

    magic    8 bytes  b"TFMOSA\\x00\\x01"
    version  uint32
    hlen     uint64   length of the UTF-8 JSON header
    header   hlen bytes; "tensors" lists name, shape, offset, count
    payload  row-major float64 data, concatenated in header order

Headers are serialized with sorted keys so identical inputs give identical
bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"TFMOSA\x00\x01"
VERSION = 1


def write_container(path, header: dict, arrays: dict) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, value in arrays.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.size
    full = dict(header)
    full["tensors"] = entries
    raw = json.dumps(full, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ParseError(f"{path}: bad magic header, not a container file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported container version {version}")
    start = 8 + struct.calcsize("<IQ")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt header ({exc})") from None
    payload = np.frombuffer(data, dtype="<f8", offset=start + hlen)
    arrays = {}
    for entry in header.pop("tensors", []):
        lo, n = entry["offset"], entry["count"]
        if lo + n > payload.size:
            raise ParseError(f"{path}: truncated payload for tensor {entry['name']!r}")
        arrays[entry["name"]] = payload[lo:lo + n].reshape(entry["shape"]).astype(np.float64)
    return header, arrays
