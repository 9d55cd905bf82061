"""Binary tensor container ("EUSG") and PGM map rendering.

The container is the only on-disk interchange format in the package.  Byte
layout, all little-endian regardless of host:

    magic   4 bytes  b"EUSG"
    version u32      currently 1
    count   u32      number of entries
    entry   repeated:
        name_len u16
        name     UTF-8, name_len bytes
        dtype    u8   1 = float32 tensor, 2 = uint16 label map
        rank     u8   1..4 for tensors, exactly 2 for label maps
        dims     rank x u64
        payload  row-major raw values

Float payloads are rejected on read when they contain NaN/Inf unless
``allow_nonfinite=True``.  A label map's ``ignore_value`` is session
configuration, not part of the file; readers get the default (255).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ContainerError,
    DomainError,
    DuplicateNameError,
    NonFiniteDataError,
    ShapeError,
    TruncatedPayloadError,
    UnknownDtypeError,
    UnsupportedVersionError,
)

MAGIC = b"EUSG"
FORMAT_VERSION = 1
DTYPE_F32 = 1
DTYPE_U16 = 2

DEFAULT_IGNORE_VALUE = 255


def _as_f32(data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    return arr


@dataclass(frozen=True)
class Tensor:
    """Named float32 array of rank 1..4."""

    name: str
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_f32(self.data))
        _check_name(self.name)
        if not 1 <= self.data.ndim <= 4:
            raise ShapeError(f"tensor '{self.name}' has rank {self.data.ndim}, expected 1..4")
        if any(d <= 0 for d in self.data.shape):
            raise ShapeError(f"tensor '{self.name}' has a non-positive extent {self.data.shape}")

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.name == other.name
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True)
class LabelMap:
    """Named H x W map of uint16 class indices.

    ``ignore_value`` marks pixels excluded from losses and metrics.  It is
    not serialized; equality compares name, shape and payload only.
    """

    name: str
    data: np.ndarray
    ignore_value: int = DEFAULT_IGNORE_VALUE

    def __post_init__(self):
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.uint16))
        _check_name(self.name)
        if self.data.ndim != 2:
            raise ShapeError(f"label map '{self.name}' has rank {self.data.ndim}, expected 2")
        if any(d <= 0 for d in self.data.shape):
            raise ShapeError(f"label map '{self.name}' has a non-positive extent {self.data.shape}")

    def validate_classes(self, num_classes: int):
        """Check every non-ignored value is < num_classes."""
        values = self.data[self.data != self.ignore_value]
        if values.size and int(values.max()) >= num_classes:
            raise DomainError(
                f"label map '{self.name}' contains class {int(values.max())} "
                f">= class count {num_classes}"
            )

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return (
            self.name == other.name
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


def _check_name(name: str):
    if not isinstance(name, str) or not name:
        raise ContainerError("entry name must be a non-empty string")
    if len(name.encode("utf-8")) > 0xFFFF:
        raise ContainerError(f"entry name too long: {len(name)} chars")


@dataclass
class TensorContainer:
    """Ordered collection of uniquely named Tensor / LabelMap entries."""

    entries: list = field(default_factory=list)

    def __post_init__(self):
        entries = list(self.entries)
        self.entries = []
        for e in entries:
            self.add(e)

    def add(self, entry):
        if not isinstance(entry, (Tensor, LabelMap)):
            raise ContainerError(f"unsupported entry type {type(entry).__name__}")
        if entry.name in self.names():
            raise DuplicateNameError(f"duplicate entry name '{entry.name}'")
        self.entries.append(entry)

    def names(self):
        return [e.name for e in self.entries]

    def __getitem__(self, name: str):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def __contains__(self, name: str):
        return name in self.names()

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, TensorContainer):
            return NotImplemented
        return self.entries == other.entries


def _encode_entry(entry) -> bytes:
    name_bytes = entry.name.encode("utf-8")
    if isinstance(entry, Tensor):
        dtype = DTYPE_F32
        payload = entry.data.astype("<f4", copy=False).tobytes()
    else:
        dtype = DTYPE_U16
        payload = entry.data.astype("<u2", copy=False).tobytes()
    head = struct.pack("<H", len(name_bytes)) + name_bytes
    head += struct.pack("<BB", dtype, entry.data.ndim)
    head += struct.pack("<%dQ" % entry.data.ndim, *entry.data.shape)
    return head + payload


def write_container(path, container: TensorContainer):
    """Serialize a container to ``path``.

    All invariants are validated before any byte is written, so an invalid
    container leaves no file behind.
    """
    if not isinstance(container, TensorContainer):
        raise ContainerError("write_container expects a TensorContainer")
    seen = set()
    for e in container:
        if e.name in seen:
            raise DuplicateNameError(f"duplicate entry name '{e.name}'")
        seen.add(e.name)
    blob = MAGIC + struct.pack("<II", FORMAT_VERSION, len(container))
    blob += b"".join(_encode_entry(e) for e in container)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedPayloadError(f"file truncated while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def done(self) -> bool:
        return self.pos == len(self.buf)


def read_container(path, allow_nonfinite: bool = False) -> TensorContainer:
    """Parse a container file; inverse of :func:`write_container`."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read())

    if cur.take(4, "magic") != MAGIC:
        raise BadMagicError(f"'{path}' does not start with {MAGIC!r}")
    (version,) = struct.unpack("<I", cur.take(4, "version"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"container version {version}, expected {FORMAT_VERSION}")
    (count,) = struct.unpack("<I", cur.take(4, "entry count"))

    container = TensorContainer()
    for i in range(count):
        (name_len,) = struct.unpack("<H", cur.take(2, f"name length of entry {i}"))
        name = cur.take(name_len, f"name of entry {i}").decode("utf-8")
        dtype, rank = struct.unpack("<BB", cur.take(2, f"header of entry '{name}'"))
        dims = struct.unpack("<%dQ" % rank, cur.take(8 * rank, f"dims of entry '{name}'"))
        if any(d <= 0 for d in dims):
            raise ContainerError(f"entry '{name}' has a non-positive extent {dims}")
        n_items = math.prod(dims)
        if dtype == DTYPE_F32:
            if not 1 <= rank <= 4:
                raise ContainerError(f"tensor entry '{name}' has rank {rank}, expected 1..4")
            raw = cur.take(4 * n_items, f"payload of entry '{name}'")
            data = np.frombuffer(raw, dtype="<f4").reshape(dims)
            if not allow_nonfinite and not np.isfinite(data).all():
                raise NonFiniteDataError(f"entry '{name}' contains non-finite values")
            entry = Tensor(name, data)
        elif dtype == DTYPE_U16:
            if rank != 2:
                raise ContainerError(f"label map entry '{name}' has rank {rank}, expected 2")
            raw = cur.take(2 * n_items, f"payload of entry '{name}'")
            entry = LabelMap(name, np.frombuffer(raw, dtype="<u2").reshape(dims))
        else:
            raise UnknownDtypeError(f"unknown dtype code {dtype} for entry '{name}'")
        if entry.name in container:
            raise DuplicateNameError(f"duplicate entry name '{name}' in '{path}'")
        container.add(entry)

    if not cur.done():
        raise ContainerError(f"'{path}' has {len(cur.buf) - cur.pos} trailing bytes")
    return container


def write_pgm(path, map2d, lo: float, hi: float):
    """Render a rank-2 map as an 8-bit binary PGM (P5).

    Values map linearly from [lo, hi] onto [0, 255] with round-half-up and
    clamping outside the range.
    """
    data = map2d.data if isinstance(map2d, Tensor) else np.asarray(map2d)
    if data.ndim != 2:
        raise ShapeError(f"PGM rendering needs a rank-2 map, got rank {data.ndim}")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    scaled = (data.astype(np.float64) - lo) * (255.0 / (hi - lo))
    pixels = np.clip(np.floor(scaled + 0.5), 0.0, 255.0).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())
