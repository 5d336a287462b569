"""STF1: a minimal single-tensor binary file format.

Layout, all little-endian:

    bytes 0..3    magic "STF1"
    u32           dtype code (0 = float32, 1 = float64)
    u32           rank
    u32 * rank    extents
    payload       raw row-major (C order) element bytes

No compression, no alignment padding, no footer. Loaders must reject bad
magic, unknown dtype codes, and payloads whose byte length does not match the
declared extents.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STF1"
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_MAX_RANK = 32


def save_stf(path, array) -> None:
    """Write a float32/float64 numpy array (or Tensor) to ``path``."""
    data = getattr(array, "data", array)
    arr = np.asarray(data)
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise TypeError(f"STF1 stores float32/float64 only, got {arr.dtype}")
    shape = arr.shape
    if len(shape) > _MAX_RANK:
        raise ValueError(f"rank {len(shape)} exceeds STF1 limit {_MAX_RANK}")
    header = MAGIC + struct.pack("<II", code, len(shape))
    header += struct.pack(f"<{len(shape)}I", *shape)
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False)
    Path(path).write_bytes(header + payload.tobytes(order="C"))


def load_stf(path) -> np.ndarray:
    """Read an STF1 file back into a C-contiguous, writable numpy array."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise ValueError(f"{path}: too short to be an STF1 file")
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    code, rank = struct.unpack_from("<II", raw, 4)
    dtype = _CODE_TO_DTYPE.get(code)
    if dtype is None:
        raise ValueError(f"{path}: unknown dtype code {code}")
    if rank > _MAX_RANK:
        raise ValueError(f"{path}: rank {rank} exceeds STF1 limit {_MAX_RANK}")
    header_end = 12 + 4 * rank
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", raw, 12)
    count = 1
    for s in shape:
        count *= s
    expected = header_end + count * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw) - header_end} bytes, "
                         f"expected {count * dtype.itemsize} for shape {shape}")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=header_end)
    return arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
