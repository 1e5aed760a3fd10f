"""Flat binary container for named parameter tensors.

Layout (all integers little-endian):
    magic   b"NFIV1"
    prec    uint8, value 32 or 64
    record* name_len uint32, name utf-8, rank uint32, extents rank*uint32,
            values prod(extents) little-endian floats of the header precision
Records run until EOF.  Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"NFIV1"

_PREC_TO_DTYPE = {32: "<f4", 64: "<f8"}
_DTYPE_TO_PREC = {np.dtype(np.float32): 32, np.dtype(np.float64): 64}


class CheckpointError(IOError):
    pass


def save(path, tensors: dict[str, np.ndarray]):
    """Write `tensors` (name -> float array, uniform dtype) to `path`."""
    if not tensors:
        raise CheckpointError("refusing to write an empty checkpoint")
    dtypes = {np.dtype(a.dtype) for a in tensors.values()}
    if len(dtypes) != 1 or dtypes.pop() not in _DTYPE_TO_PREC:
        raise CheckpointError("checkpoint tensors must share one float dtype")
    prec = _DTYPE_TO_PREC[np.dtype(next(iter(tensors.values())).dtype)]
    wire = _PREC_TO_DTYPE[prec]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", prec))
        for name, arr in tensors.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=wire).tobytes())


def load(path) -> dict[str, np.ndarray]:
    """Read a container written by `save`; preserves order, names, values."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r} in {path}")
        (prec,) = struct.unpack("<B", f.read(1))
        if prec not in _PREC_TO_DTYPE:
            raise CheckpointError(f"bad precision flag {prec} in {path}")
        wire = _PREC_TO_DTYPE[prec]
        itemsize = prec // 8
        out: dict[str, np.ndarray] = {}
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated record header")
            (name_len,) = struct.unpack("<I", head)
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            count = int(np.prod(shape)) if rank else 1
            raw = f.read(count * itemsize)
            if len(raw) != count * itemsize:
                raise CheckpointError(f"truncated values for tensor '{name}'")
            out[name] = np.frombuffer(raw, dtype=wire).reshape(shape).copy()
        return out
