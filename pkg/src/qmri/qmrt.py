"""QMRT tensor file format: bit-exact interchange between pipeline stages.

Layout, all little-endian regardless of host:

    bytes 0..3   magic "QMRT"
    byte  4      version, 0x01
    byte  5      dtype code: 0x01 float64, 0x02 complex128, 0x03 bool
    byte  6      ndim, unsigned 8-bit
    next 8*ndim  extents, unsigned 64-bit little-endian each
    rest         payload, row-major; float64/complex128 little-endian,
                 complex as (real, imag) float64 pairs, bool one byte
                 per value (0x00 / 0x01)

Trailing bytes after the payload are rejected as a format error;
a short payload is a truncation error.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .exceptions import QmrtFormatError, QmrtTruncationError

MAGIC = b"QMRT"
VERSION = 0x01

_DTYPE_CODES = {
    np.dtype(np.float64): 0x01,
    np.dtype(np.complex128): 0x02,
    np.dtype(np.bool_): 0x03,
}
_CODE_DTYPES = {
    0x01: np.dtype("<f8"),
    0x02: np.dtype("<c16"),
    0x03: np.dtype(np.uint8),
}
_ITEM_SIZES = {0x01: 8, 0x02: 16, 0x03: 1}


def write_tensor(t: np.ndarray, path) -> None:
    """Write a float64/complex128/bool array to `path` in QMRT format."""
    t = np.asarray(t)
    if t.dtype not in _DTYPE_CODES:
        raise QmrtFormatError(f"unsupported dtype {t.dtype}; use float64, complex128, or bool")
    if t.ndim > 255:
        raise QmrtFormatError(f"ndim {t.ndim} exceeds format limit 255")
    code = _DTYPE_CODES[t.dtype]
    header = bytearray()
    header += MAGIC
    header.append(VERSION)
    header.append(code)
    header.append(t.ndim)
    for extent in t.shape:
        header += struct.pack("<Q", extent)
    if code == 0x03:
        payload = np.ascontiguousarray(t, dtype=np.uint8).tobytes()
    elif code == 0x01:
        payload = np.ascontiguousarray(t, dtype="<f8").tobytes()
    else:
        payload = np.ascontiguousarray(t, dtype="<c16").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(bytes(header))
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write QMRT tensor to {path}: {exc}") from exc


def read_tensor(path) -> np.ndarray:
    """Read a QMRT file back into an array; inverse of :func:`write_tensor`."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read QMRT tensor from {path}: {exc}") from exc

    if len(raw) < 7:
        raise QmrtTruncationError(f"{path}: file shorter than fixed header (7 bytes)")
    if raw[:4] != MAGIC:
        raise QmrtFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if raw[4] != VERSION:
        raise QmrtFormatError(f"{path}: unsupported version {raw[4]:#04x}")
    code = raw[5]
    if code not in _CODE_DTYPES:
        raise QmrtFormatError(f"{path}: unknown dtype code {code:#04x}")
    ndim = raw[6]

    offset = 7
    if len(raw) < offset + 8 * ndim:
        raise QmrtTruncationError(f"{path}: file ends inside the extents block")
    shape = tuple(
        struct.unpack_from("<Q", raw, offset + 8 * i)[0] for i in range(ndim)
    )
    offset += 8 * ndim

    count = 1
    for extent in shape:
        count *= extent
    expected = count * _ITEM_SIZES[code]
    available = len(raw) - offset
    if available < expected:
        raise QmrtTruncationError(
            f"{path}: payload has {available} bytes, expected {expected}"
        )
    if available > expected:
        raise QmrtFormatError(
            f"{path}: {available - expected} trailing bytes after payload"
        )

    data = np.frombuffer(raw, dtype=_CODE_DTYPES[code], count=count, offset=offset)
    if code == 0x03:
        out = (data != 0).reshape(shape)
    elif code == 0x01:
        out = data.astype(np.float64).reshape(shape)
    else:
        out = data.astype(np.complex128).reshape(shape)
    return out.copy()
