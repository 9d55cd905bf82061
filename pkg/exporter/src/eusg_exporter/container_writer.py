"""Write-only implementation of the EUSG container byte layout.

Deliberately independent of the engine's reader so that engine-side loads
of exported files exercise the wire contract across two implementations.

Layout (little-endian): magic "EUSG", u32 version=1, u32 entry count, then
per entry u16 name length, UTF-8 name, u8 dtype (1=float32, 2=uint16),
u8 rank, rank x u64 dims, row-major payload.
"""

import struct

import numpy as np

MAGIC = b"EUSG"
VERSION = 1
DTYPE_F32 = 1
DTYPE_U16 = 2


class ExportFormatError(ValueError):
    pass


def _entry_bytes(name: str, array: np.ndarray) -> bytes:
    if array.dtype == np.float32:
        code = DTYPE_F32
        payload = np.ascontiguousarray(array).astype("<f4", copy=False).tobytes()
        if not 1 <= array.ndim <= 4:
            raise ExportFormatError(f"tensor '{name}' must have rank 1..4, got {array.ndim}")
    elif array.dtype == np.uint16:
        code = DTYPE_U16
        payload = np.ascontiguousarray(array).astype("<u2", copy=False).tobytes()
        if array.ndim != 2:
            raise ExportFormatError(f"label map '{name}' must have rank 2, got {array.ndim}")
    else:
        raise ExportFormatError(f"entry '{name}' has unsupported dtype {array.dtype}")
    if any(d <= 0 for d in array.shape):
        raise ExportFormatError(f"entry '{name}' has a non-positive extent {array.shape}")
    encoded = name.encode("utf-8")
    if not encoded or len(encoded) > 0xFFFF:
        raise ExportFormatError(f"bad entry name '{name}'")
    head = struct.pack("<H", len(encoded)) + encoded
    head += struct.pack("<BB", code, array.ndim)
    head += struct.pack("<%dQ" % array.ndim, *array.shape)
    return head + payload


def write_entries(path, entries):
    """Write an ordered list of (name, numpy array) pairs as a container."""
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise ExportFormatError(f"duplicate entry names in {names}")
    blob = MAGIC + struct.pack("<II", VERSION, len(entries))
    blob += b"".join(_entry_bytes(n, np.asarray(a)) for n, a in entries)
    with open(path, "wb") as fh:
        fh.write(blob)
