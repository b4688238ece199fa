"""Flat binary checkpoint format.

A checkpoint is a sequence of named array records so that another
implementation (any language) can read it with nothing but a byte
reader.  All multi-byte fields are little-endian.  Layout:

    offset  size          field
    0       4             magic ``b"DSAT"``
    4       1             format version, currently 1
    then, repeated until end of file, one record per array:
            2             name length L (uint16)
            L             name (UTF-8)
            1             rank R (uint8)
            8 * R         extents (uint64 each)
            4 * prod      data (float32, row-major)

Record names are unique within a file and preserve write order.
Non-float32 arrays are cast to float32 on save; integers that must
round-trip exactly (step counters, queue positions) stay safe well
beyond any realistic training length (float32 is exact through 2**24).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = ["MAGIC", "VERSION", "save_checkpoint", "load_checkpoint"]

MAGIC = b"DSAT"
VERSION = 1


def save_checkpoint(path, records: dict[str, np.ndarray]) -> None:
    """Write named arrays to ``path`` in the documented binary layout."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        for name, arr in records.items():
            data = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValueError(f"record name too long: {len(encoded)} bytes")
            if data.ndim > 0xFF:
                raise ValueError(f"record rank too large: {data.ndim}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into name -> float32 array, in file order."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 5:
        raise DataError(f"{path}: truncated checkpoint header")
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if blob[4] != VERSION:
        raise DataError(f"{path}: unsupported format version {blob[4]}")

    records: dict[str, np.ndarray] = {}
    pos = 5
    end = len(blob)
    while pos < end:
        if pos + 2 > end:
            raise DataError(f"{path}: truncated record header at byte {pos}")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + name_len + 1 > end:
            raise DataError(f"{path}: truncated record name at byte {pos}")
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rank = blob[pos]
        pos += 1
        if pos + 8 * rank > end:
            raise DataError(f"{path}: truncated extents for record {name!r}")
        shape = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        count = int(np.prod(shape)) if rank else 1
        nbytes = 4 * count
        if pos + nbytes > end:
            raise DataError(f"{path}: truncated data for record {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += nbytes
        if name in records:
            raise DataError(f"{path}: duplicate record name {name!r}")
        records[name] = arr.copy()
    return records
