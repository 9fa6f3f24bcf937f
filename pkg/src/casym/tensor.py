"""Dense tensor values and their bit-exact NTF serialization.

Tensors are plain numpy arrays restricted to three dtypes: float32 (model
math), float64 (metric accumulation) and uint8 (masks, labels). The NTF
layout is fixed little-endian regardless of host byte order:

    bytes 0-3   magic ``NTF1``
    byte 4      dtype code (0=f32, 1=f64, 2=u8)
    byte 5      ndim (u8)
    next        ndim x u64 little-endian extents
    rest        row-major payload, little-endian
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"NTF1"

# dtype code <-> canonical little-endian numpy dtype
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_KIND_TO_CODE = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2}


def _dtype_code(dtype: np.dtype) -> int:
    try:
        return _KIND_TO_CODE[(dtype.kind, dtype.itemsize)]
    except KeyError:
        raise DataError(f"unsupported dtype for NTF: {dtype}") from None


def validate_tensor(arr: np.ndarray) -> np.ndarray:
    """Check the tensor invariants: supported dtype, non-empty shape, extents >= 1."""
    arr = np.asarray(arr)
    _dtype_code(arr.dtype)
    if arr.ndim == 0:
        raise DataError("tensor shape must be non-empty (0-d arrays not supported)")
    if any(e < 1 for e in arr.shape):
        raise DataError(f"tensor extents must all be >= 1, got shape {arr.shape}")
    return arr


def ntf_byte_size(shape: tuple[int, ...], dtype: np.dtype) -> int:
    """Exact on-disk size: 4 magic + 1 dtype + 1 ndim + 8*ndim extents + payload."""
    count = 1
    for e in shape:
        count *= e
    return 4 + 1 + 1 + 8 * len(shape) + np.dtype(dtype).itemsize * count


def ntf_write(t: np.ndarray, path: str | Path) -> None:
    """Write a tensor to ``path`` in NTF layout (always little-endian)."""
    t = validate_tensor(t)
    if t.ndim > 255:
        raise DataError(f"NTF supports at most 255 dims, got {t.ndim}")
    code = _dtype_code(t.dtype)
    le = np.ascontiguousarray(t, dtype=_CODE_TO_DTYPE[code])
    header = MAGIC + struct.pack("<BB", code, t.ndim)
    header += struct.pack(f"<{t.ndim}Q", *t.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(le.tobytes())
    except OSError as exc:
        raise DataError(f"cannot write NTF file {path}: {exc}") from exc


def ntf_read(path: str | Path) -> np.ndarray:
    """Read an NTF file back into a numpy array (native byte order)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read NTF file {path}: {exc}") from exc
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not an NTF file (bad magic)")
    code, ndim = struct.unpack_from("<BB", blob, 4)
    if code not in _CODE_TO_DTYPE:
        raise DataError(f"{path}: unsupported dtype code {code}")
    if ndim == 0:
        raise DataError(f"{path}: tensor shape must be non-empty")
    offset = 6
    if len(blob) < offset + 8 * ndim:
        raise DataError(f"{path}: size mismatch (truncated shape header)")
    shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
    offset += 8 * ndim
    if any(e < 1 for e in shape):
        raise DataError(f"{path}: tensor extents must all be >= 1, got {shape}")
    dtype = _CODE_TO_DTYPE[code]
    count = 1
    for e in shape:
        count *= e
    expected = count * dtype.itemsize
    if len(blob) - offset != expected:
        raise DataError(
            f"{path}: size mismatch (payload {len(blob) - offset} bytes, "
            f"shape {tuple(shape)} needs {expected})"
        )
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    # native-order, writable copy
    return arr.astype(dtype.newbyteorder("="), copy=True).reshape(shape)


def channel_mean(t: np.ndarray, c: int) -> float:
    """Arithmetic mean of all spatial values in channel ``c`` of a [C,H,W] tensor."""
    t = np.asarray(t)
    if t.ndim != 3:
        raise DataError(f"channel_mean expects a [C,H,W] tensor, got shape {t.shape}")
    if not 0 <= c < t.shape[0]:
        raise DataError(f"channel index {c} out of range for {t.shape[0]} channels")
    return float(t[c].mean(dtype=np.float64))
