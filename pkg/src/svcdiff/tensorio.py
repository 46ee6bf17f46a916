"""Binary tensor files with a fixed 32-byte header.

Layout: 8-byte magic, uint32 dtype code, uint32 rank, four uint32 dims
(unused dims zero), then the raw little-endian payload.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SVCTNSR1"

_DTYPES = {1: "<f4", 2: "<f8", 3: "u1"}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.uint8): 3, np.dtype(bool): 3}


def write_tensor(path, array: np.ndarray):
    arr = np.asarray(array)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float32)
    code = _CODES[arr.dtype]
    if arr.ndim > 4:
        raise ValueError(f"rank {arr.ndim} > 4 not supported")
    dims = list(arr.shape) + [0] * (4 - arr.ndim)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<6I", code, arr.ndim, *dims))
        fh.write(np.ascontiguousarray(arr).astype(_DTYPES[code]).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad tensor magic {magic!r}")
        code, rank, *dims = struct.unpack("<6I", fh.read(24))
        if code not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        shape = tuple(dims[:rank])
        data = np.frombuffer(fh.read(), dtype=_DTYPES[code])
    expect = int(np.prod(shape)) if shape else 1
    if data.size != expect:
        raise ValueError(f"{path}: payload has {data.size} items, header says {expect}")
    return data.reshape(shape).copy()
