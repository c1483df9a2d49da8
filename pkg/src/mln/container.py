"""Little-endian binary container for codebooks, token pyramids and weights.

Layout::

    magic    4 bytes   b"MLNC"
    version  u16       1
    count    u16       number of sections
    table    count x 48-byte entries:
                 tag     16 bytes ASCII, NUL padded
                 dtype   u8   (1 = float64, 2 = int32, 3 = float32)
                 ndim    u8   (0..4)
                 pad     u16
                 dims    4 x u32 (unused dims are 0)
                 offset  u64  absolute byte offset of the payload
    payloads  row-major little-endian arrays, in table order

A codebook file therefore holds one ``codebook`` section of shape (V, d).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MLNC"
VERSION = 1
_HEADER = struct.Struct("<4sHH")
_ENTRY = struct.Struct("<16sBBH4IQ")
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i4"), 3: np.dtype("<f4")}
_CODES = {np.dtype("<f8"): 1, np.dtype("<i4"): 2, np.dtype("<f4"): 3}


class ContainerError(ValueError):
    """Raised for malformed or corrupted container files."""


def pack(sections: dict[str, np.ndarray]) -> bytes:
    items = []
    for tag, arr in sections.items():
        raw = tag.encode("ascii")
        if len(raw) > 16:
            raise ValueError(f"section tag too long: {tag!r}")
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f4" if arr.dtype.itemsize == 4 else "<f8")
        elif arr.dtype.kind in "iub":
            if arr.size and (arr.min() < -2**31 or arr.max() >= 2**31):
                raise ValueError(f"section {tag!r} has integers outside the int32 range")
            arr = arr.astype("<i4")
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for section {tag!r}")
        if arr.ndim > 4:
            raise ValueError(f"section {tag!r} has more than 4 dims")
        items.append((raw, np.ascontiguousarray(arr)))

    offset = _HEADER.size + _ENTRY.size * len(items)
    table = []
    payload = []
    for raw, arr in items:
        dims = list(arr.shape) + [0] * (4 - arr.ndim)
        table.append(_ENTRY.pack(raw, _CODES[arr.dtype], arr.ndim, 0, *dims, offset))
        data = arr.tobytes(order="C")
        payload.append(data)
        offset += len(data)
    return _HEADER.pack(MAGIC, VERSION, len(items)) + b"".join(table) + b"".join(payload)


def unpack(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < _HEADER.size:
        raise ContainerError("truncated container header")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        pos = _HEADER.size + i * _ENTRY.size
        if pos + _ENTRY.size > len(blob):
            raise ContainerError("truncated section table")
        raw, code, ndim, _, d0, d1, d2, d3, offset = _ENTRY.unpack_from(blob, pos)
        if code not in _DTYPES or ndim > 4:
            raise ContainerError(f"bad section entry {i}")
        dtype = _DTYPES[code]
        shape = (d0, d1, d2, d3)[:ndim]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(blob):
            raise ContainerError(f"section {i} overruns the file")
        arr = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
        tag = raw.rstrip(b"\0").decode("ascii")
        out[tag] = arr.reshape(shape).astype(dtype.newbyteorder("="))
    return out


def write(path, sections: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(pack(sections))


def read(path) -> dict[str, np.ndarray]:
    return unpack(Path(path).read_bytes())
