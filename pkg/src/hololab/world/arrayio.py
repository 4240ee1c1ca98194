"""Binary array files and PNG frame persistence.

Array file layout (all little-endian):

    bytes 0..3    magic  b"HLAR"
    bytes 4..7    dtype code, uint32 (1=float32, 2=float64, 3=uint8, 4=int64)
    bytes 8..11   rank, uint32
    bytes 12..15  reserved, uint32 (zero)
    then          rank x uint64 dimension sizes
    then          raw C-order array data

Video frames are persisted as 8-bit RGB PNGs with values mapped from
[-1, 1] to [0, 255]; the sentinel background (-1 in all channels) maps to
pure black. A companion 1-bit mask PNG marks garment pixels so the exact
sentinel is restored on load regardless of quantization.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"HLAR"

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
    np.dtype("<i8"): 4,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def write_array(path: str | Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    header = MAGIC + struct.pack("<III", _DTYPE_CODES[dtype], arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(arr.astype(dtype, copy=False).tobytes())


def read_array(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != MAGIC:
            raise ValueError(f"{path}: not an array file (bad magic)")
        code, rank, _ = struct.unpack("<III", header[4:])
        if code not in _CODE_DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
        data = fh.read()
    arr = np.frombuffer(data, dtype=_CODE_DTYPES[code]).reshape(dims)
    return arr.copy()


def save_frame_png(path: str | Path, frame: np.ndarray) -> None:
    """Save one (H, W, 3) frame in [-1, 1] as 8-bit RGB."""
    u8 = np.clip(np.round((frame + 1.0) * 0.5 * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def load_frame_png(path: str | Path) -> np.ndarray:
    u8 = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return u8 / 255.0 * 2.0 - 1.0


def save_mask_png(path: str | Path, mask: np.ndarray) -> None:
    """Save a boolean (H, W) garment mask as a 1-bit PNG."""
    Image.fromarray(mask.astype(np.uint8) * 255).convert("1").save(path)


def load_mask_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("1"), dtype=bool)
