"""Dense 2D/3D scalar volumes, binary masks, and the RVL1 binary file format.

All in-memory scalar data is float64; float32 only exists at the file
boundary. Layout is row-major with the last axis fastest, and 3D
coordinates are written (z, y, x) throughout the package.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagic, TruncatedPayload, UnknownDtype

MAGIC = b"RVL1"
DTYPE_F32 = 0
DTYPE_U8 = 1

_MAX_DIM = 2**32 - 1  # dims are stored as u32


@dataclass(frozen=True)
class Shape:
    """Voxel grid extents, e.g. (4, 4) or (48, 48, 48)."""

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) not in (2, 3):
            raise ValueError(f"shape must be 2D or 3D, got {len(self.dims)} dims")
        dims = tuple(int(d) for d in self.dims)
        for d in dims:
            if d < 1 or d > _MAX_DIM:
                raise ValueError(f"invalid dim {d!r}")
        object.__setattr__(self, "dims", dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def num_voxels(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def ravel(self, coords) -> int:
        """Coordinate tuple -> flat index (row-major, last axis fastest)."""
        return int(np.ravel_multi_index(tuple(coords), self.dims))

    def unravel(self, flat: int) -> tuple[int, ...]:
        """Flat index -> coordinate tuple."""
        return tuple(int(c) for c in np.unravel_index(int(flat), self.dims))


def _as_flat(data, shape: Shape, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=dtype).reshape(-1)
    if arr.size != shape.num_voxels:
        raise ValueError(
            f"data length {arr.size} does not match shape {shape.dims}"
        )
    return arr


@dataclass
class Volume:
    """Scalar field over a Shape; flat float64 storage.

    Immutable by convention after construction: shared reads are safe,
    mutation is only allowed on a freshly constructed, unshared instance.
    """

    shape: Shape
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = _as_flat(self.data, self.shape, np.float64)

    @classmethod
    def from_grid(cls, grid) -> "Volume":
        grid = np.asarray(grid, dtype=np.float64)
        return cls(Shape(tuple(grid.shape)), grid)

    @property
    def grid(self) -> np.ndarray:
        """N-dimensional view of the flat data."""
        return self.data.reshape(self.shape.dims)


@dataclass
class BinaryMask:
    """0/1 field over a Shape; flat uint8 storage."""

    shape: Shape
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = _as_flat(self.data, self.shape, np.uint8)
        bad = (self.data > 1).any()
        if bad:
            raise ValueError("mask values must be 0 or 1")

    @classmethod
    def from_grid(cls, grid) -> "BinaryMask":
        grid = np.asarray(grid)
        return cls(Shape(tuple(grid.shape)), grid.astype(np.uint8))

    @property
    def grid(self) -> np.ndarray:
        return self.data.reshape(self.shape.dims)

    @property
    def num_foreground(self) -> int:
        return int(self.data.sum())


def threshold(v: Volume, tau: float) -> BinaryMask:
    """Binarize with a strict > comparison: exactly-tau maps to background."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")
    return BinaryMask(v.shape, (v.data > tau).astype(np.uint8))


def mask_to_volume(m: BinaryMask) -> Volume:
    """Lift a mask to a 0.0/1.0 float volume."""
    return Volume(m.shape, m.data.astype(np.float64))


def write_volume(v: Volume | BinaryMask) -> bytes:
    """Serialize to RVL1 bytes. Volumes narrow to f32, masks stay u8."""
    if isinstance(v, Volume):
        code = DTYPE_F32
        payload = v.data.astype("<f4").tobytes()
    elif isinstance(v, BinaryMask):
        code = DTYPE_U8
        payload = v.data.astype("<u1").tobytes()
    else:
        raise TypeError(f"cannot serialize {type(v).__name__}")
    dims = v.shape.dims
    header = struct.pack("<4sBB", MAGIC, code, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    return header + payload


def read_volume(buf: bytes) -> Volume | BinaryMask:
    """Parse RVL1 bytes. f32 payloads widen to f64 in memory."""
    if len(buf) < 6:
        raise TruncatedPayload(f"file too short for header ({len(buf)} bytes)")
    magic, code, ndim = struct.unpack_from("<4sBB", buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    if code not in (DTYPE_F32, DTYPE_U8):
        raise UnknownDtype(f"dtype code {code}")
    off = 6
    if len(buf) < off + 4 * ndim:
        raise TruncatedPayload("file too short for declared dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    shape = Shape(tuple(int(d) for d in dims))
    itemsize = 4 if code == DTYPE_F32 else 1
    expected = shape.num_voxels * itemsize
    if len(buf) - off != expected:
        raise TruncatedPayload(
            f"payload is {len(buf) - off} bytes, header declares {expected}"
        )
    raw = buf[off:]
    if code == DTYPE_F32:
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        return Volume(shape, data)
    data = np.frombuffer(raw, dtype="<u1").copy()
    return BinaryMask(shape, data)


def write_volume_file(path, v: Volume | BinaryMask) -> None:
    with open(path, "wb") as f:
        f.write(write_volume(v))


def read_volume_file(path) -> Volume | BinaryMask:
    with open(path, "rb") as f:
        return read_volume(f.read())
