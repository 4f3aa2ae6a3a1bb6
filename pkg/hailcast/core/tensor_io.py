"""
FGT1 tensor files.

Layout (all integers little-endian):
- bytes 0-3: ASCII magic ``FGT1``
- byte 4: dtype code (1 = float32, 2 = float64)
- byte 5: rank r <= 8
- next 4*r bytes: unsigned 32-bit extents
- row-major payload

Datasets, nowcasts and checkpoint parameters are all stored this way.
"""

import math
import struct
from pathlib import Path

import numpy as np

from hailcast.core.errors import FormatError
from hailcast.numeric.tensor import Tensor

MAGIC = b"FGT1"
MAX_RANK = 8
HEADER_FIXED = 6
# Refuse payloads above 256 GiB: corrupt extents, not real data.
MAX_PAYLOAD_BYTES = 1 << 38

DTYPE_CODES: dict[int, np.dtype] = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
}
_CODE_FOR_KIND = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def encode_array(array: np.ndarray) -> bytes:
    """Serialize a float32/float64 array into FGT1 bytes."""
    dtype = np.dtype(array.dtype)
    if dtype.newbyteorder("=") not in _CODE_FOR_KIND:
        raise FormatError(f"Unsupported dtype {dtype}", offset=4)
    code = _CODE_FOR_KIND[dtype.newbyteorder("=")]
    if array.ndim > MAX_RANK:
        raise FormatError(f"Rank {array.ndim} exceeds {MAX_RANK}", offset=5)
    header = MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()
    return header + payload


def decode_array(buffer: bytes) -> np.ndarray:
    """Parse FGT1 bytes; raises FormatError with the offending byte offset."""
    if len(buffer) < 4 or buffer[:4] != MAGIC:
        raise FormatError("Bad magic, expected b'FGT1'", offset=0)
    if len(buffer) < HEADER_FIXED:
        raise FormatError("Truncated header", offset=len(buffer))

    code, rank = buffer[4], buffer[5]
    if code not in DTYPE_CODES:
        raise FormatError(f"Unknown dtype code {code}", offset=4)
    if rank > MAX_RANK:
        raise FormatError(f"Rank {rank} exceeds {MAX_RANK}", offset=5)

    header_len = HEADER_FIXED + 4 * rank
    if len(buffer) < header_len:
        raise FormatError("Truncated extents", offset=len(buffer))
    shape = struct.unpack_from(f"<{rank}I", buffer, HEADER_FIXED)

    dtype = DTYPE_CODES[code]
    expected = math.prod(shape) * dtype.itemsize
    if expected > MAX_PAYLOAD_BYTES:
        raise FormatError("Extent overflow", offset=HEADER_FIXED, shape=list(shape))
    actual = len(buffer) - header_len
    if actual < expected:
        raise FormatError(
            f"Truncated payload: expected {expected} bytes, found {actual}",
            offset=len(buffer),
        )
    if actual > expected:
        raise FormatError("Trailing bytes after payload", offset=header_len + expected)

    return np.frombuffer(buffer, dtype=dtype, count=math.prod(shape), offset=header_len).reshape(
        shape
    ).copy()


def write_array(path: str | Path, array: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_array(np.asarray(array)))


def read_array(path: str | Path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def write_tensor_file(path: str | Path, tensor: Tensor | np.ndarray) -> None:
    """Write a tensor (or raw array) to ``path`` in FGT1 format."""
    write_array(path, tensor.data if isinstance(tensor, Tensor) else tensor)


def read_tensor_file(path: str | Path) -> Tensor:
    """Read an FGT1 file into a Tensor that keeps the file's dtype."""
    array = read_array(path)
    return Tensor(array, dtype=array.dtype)
