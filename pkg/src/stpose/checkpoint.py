"""Binary checkpoint container for named parameter tensors.

Layout, all integers little-endian:

    magic   8 bytes  b"MAEDCKPT"
    version u32      currently 1
    count   u32      number of entries

then per entry:

    name_len u16, name UTF-8
    dtype    u8    0 = float32, 1 = float64
    rank     u8
    extents  rank * u32
    data     raw little-endian values, C order

Values are written as float64 by default so a save/load round trip is
bitwise exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"MAEDCKPT"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict, dtype: str = "f8"):
    """Write `name -> Tensor` (or ndarray) entries to `path`."""
    code = {"f4": 0, "f8": 1}.get(dtype)
    if code is None:
        raise CheckpointError(f"dtype must be 'f4' or 'f8', got {dtype!r}")
    out_dtype = _DTYPE_CODES[code]
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        data = np.asarray(data, dtype=out_dtype)  # ascontiguousarray bumps 0-d to 1-d
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name!r}")
        if data.ndim > 0xFF:
            raise CheckpointError(f"parameter rank too large: {name!r}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        piece = self.blob[self.pos:self.pos + n]
        self.pos += n
        return piece

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> dict:
    """Read a checkpoint back as `name -> ndarray` (float64)."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version, count = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, rank = reader.unpack("<BB")
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"unknown dtype code {code} for {name!r}")
        shape = reader.unpack(f"<{rank}I")
        item_dtype = _DTYPE_CODES[code]
        n_items = 1
        for extent in shape:
            n_items *= extent
        raw = reader.take(n_items * item_dtype.itemsize)
        data = np.frombuffer(raw, dtype=item_dtype).reshape(shape)
        params[name] = np.array(data, dtype=np.float64)
    if reader.pos != len(reader.blob):
        raise CheckpointError("trailing bytes after last entry")
    return params


def restore_params(params: dict, loaded: dict):
    """Copy loaded arrays into live parameter tensors, in place."""
    missing = sorted(set(params) - set(loaded))
    extra = sorted(set(loaded) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, tensor in params.items():
        arr = loaded[name]
        if tuple(arr.shape) != tuple(tensor.data.shape):
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {arr.shape}, "
                f"model {tensor.data.shape}")
        tensor.data[...] = arr
