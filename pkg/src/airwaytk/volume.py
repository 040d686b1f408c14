"""Core 3D volume data model, connectivity helpers, and MHD file I/O.

Volumes are dense 3D scalar grids stored z-major: a C-contiguous array of
shape (nz, ny, nx), so ``data.ravel()[z*ny*nx + y*nx + x] == data[z, y, x]``.
Spacing is (sz, sy, sx) in millimeters. Each volume carries a role that pins
its value domain and on-disk element type.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    IndexOutOfBoundsError,
    IoFailureError,
    MissingHeaderKeyError,
    RoleMismatchError,
    SizeMismatchError,
    UnsupportedElementTypeError,
    ValidationError,
)


class Role(enum.Enum):
    INTENSITY = "intensity"
    PROBABILITY = "probability"
    BINARY = "binary"
    LABEL = "label"


class Connectivity(enum.Enum):
    """Voxel neighborhood: 6 face, 18 face+edge, or 26 face+edge+vertex."""

    FACE6 = 6
    EDGE18 = 18
    VERTEX26 = 26

    def offsets(self) -> np.ndarray:
        """(k, 3) array of (dz, dy, dx) neighbor offsets, fixed z-major order."""
        return _OFFSETS[self]


def _build_offsets() -> dict[Connectivity, np.ndarray]:
    offs = {k: [] for k in Connectivity}
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dz == dy == dx == 0:
                    continue
                manhattan = abs(dz) + abs(dy) + abs(dx)
                if manhattan <= 1:
                    offs[Connectivity.FACE6].append((dz, dy, dx))
                if manhattan <= 2:
                    offs[Connectivity.EDGE18].append((dz, dy, dx))
                offs[Connectivity.VERTEX26].append((dz, dy, dx))
    return {k: np.array(v, dtype=np.int64) for k, v in offs.items()}


_OFFSETS = _build_offsets()

# dtype accepted in memory per role; the first entry is the save/cast target
_ROLE_DTYPES = {
    Role.INTENSITY: (np.float32, np.int16, np.float64),
    Role.PROBABILITY: (np.float32, np.float64),
    Role.BINARY: (np.uint8,),
    Role.LABEL: (np.uint32,),
}


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable 3D grid with physical spacing and a value-domain role.

    ``data`` is normalized to a read-only C-contiguous array of a role-legal
    dtype (Binary -> uint8, Label -> uint32, Probability/Intensity -> float32
    unless already float64/int16). Role invariants are checked eagerly.
    Equality is identity; compare contents with :func:`volumes_equal`.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    role: Role = Role.INTENSITY
    _skip_validation: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValidationError(f"volume data must be 3D, got ndim={arr.ndim}")
        legal = _ROLE_DTYPES[self.role]
        if arr.dtype not in [np.dtype(t) for t in legal]:
            arr = arr.astype(legal[0])
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise ValidationError(f"spacing must be 3 positive floats, got {self.spacing}")
        object.__setattr__(self, "spacing", sp)
        if not self._skip_validation:
            self._check_role()

    def _check_role(self):
        if self.data.size == 0:
            raise ValidationError("volume must be non-empty")
        if self.role is Role.PROBABILITY:
            lo, hi = float(self.data.min()), float(self.data.max())
            if lo < 0.0 or hi > 1.0:
                raise RoleMismatchError(f"probability values outside [0,1]: [{lo}, {hi}]")
        elif self.role is Role.BINARY:
            bad = np.setdiff1d(np.unique(self.data), [0, 1])
            if bad.size:
                raise RoleMismatchError(f"binary values outside {{0,1}}: {bad[:5]}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # (nz, ny, nx)

    def flatten_index(self, idx: tuple[int, int, int]) -> int:
        z, y, x = idx
        nz, ny, nx = self.shape
        return z * ny * nx + y * nx + x

    def unflatten_index(self, flat: int) -> tuple[int, int, int]:
        nz, ny, nx = self.shape
        z, rem = divmod(flat, ny * nx)
        y, x = divmod(rem, nx)
        return (int(z), int(y), int(x))

    def with_data(self, data: np.ndarray, role: Role | None = None) -> "Volume":
        """New volume sharing this one's spacing."""
        return Volume(data, self.spacing, self.role if role is None else role)

    def same_grid(self, other: "Volume") -> bool:
        return self.shape == other.shape and self.spacing == other.spacing


def volumes_equal(a: Volume, b: Volume) -> bool:
    """True when shape, spacing, role, and every voxel agree exactly."""
    return (
        a.role is b.role
        and a.spacing == b.spacing
        and a.shape == b.shape
        and np.array_equal(a.data, b.data)
    )


def neighbors(v: Volume, idx: tuple[int, int, int], conn: Connectivity) -> list[tuple[int, int, int]]:
    """In-bounds neighbors of ``idx`` under ``conn``, in fixed offset order."""
    nz, ny, nx = v.shape
    z, y, x = idx
    if not (0 <= z < nz and 0 <= y < ny and 0 <= x < nx):
        raise IndexOutOfBoundsError(f"index {idx} outside shape {v.shape}")
    out = []
    for dz, dy, dx in conn.offsets():
        zz, yy, xx = z + dz, y + dy, x + dx
        if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx:
            out.append((int(zz), int(yy), int(xx)))
    return out


def threshold(v: Volume, t: float) -> Volume:
    """Binarize a probability volume: 1 where value >= t (inclusive)."""
    if v.role is not Role.PROBABILITY:
        raise RoleMismatchError(f"threshold requires a Probability volume, got {v.role}")
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"threshold must lie in [0,1], got {t}")
    return Volume((v.data >= t).astype(np.uint8), v.spacing, Role.BINARY)


# ---------------------------------------------------------------------------
# MHD (MetaImage-style) I/O
#
# Header: ASCII "Key = value" lines. Required keys: NDims (3), DimSize
# (nx ny nz), ElementType, ElementSpacing (sx sy sz), ElementDataFile
# (relative raw filename). Payload: little-endian, x-fastest on disk, which
# matches the internal z-major C layout directly. Unknown keys are kept in
# the parsed header dict and otherwise ignored.
# ---------------------------------------------------------------------------

_ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_UINT": np.dtype("<u4"),
}

_DTYPE_TO_ELEMENT = {
    np.dtype(np.uint8): "MET_UCHAR",
    np.dtype(np.int16): "MET_SHORT",
    np.dtype(np.float32): "MET_FLOAT",
    np.dtype(np.float64): "MET_FLOAT",  # lossy: written as float32
    np.dtype(np.uint32): "MET_UINT",
}

_DEFAULT_ROLE_BY_ELEMENT = {
    "MET_UCHAR": Role.BINARY,
    "MET_SHORT": Role.INTENSITY,
    "MET_FLOAT": Role.PROBABILITY,
    "MET_UINT": Role.LABEL,
}

_REQUIRED_KEYS = ("NDims", "DimSize", "ElementType", "ElementSpacing", "ElementDataFile")


def read_mhd_header(path: Path) -> dict[str, str]:
    """Parse an .mhd header into an ordered key -> raw-value dict."""
    header: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IoFailureError(f"cannot read header {path}: {e}") from e
    for line in text.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        header[key.strip()] = value.strip()
    return header


def load_volume(path: str | Path, role: Role | None = None) -> Volume:
    """Load an .mhd/.raw pair.

    ``role`` overrides the default inference from ElementType (uchar->Binary,
    short->Intensity, float->Probability if all values in [0,1] else
    Intensity, uint->Label).
    """
    path = Path(path)
    header = read_mhd_header(path)
    for key in _REQUIRED_KEYS:
        if key not in header:
            raise MissingHeaderKeyError(f"{path}: missing required key {key!r}")
    if header["NDims"] != "3":
        raise ValidationError(f"{path}: NDims must be 3, got {header['NDims']}")
    elem = header["ElementType"]
    if elem not in _ELEMENT_TYPES:
        raise UnsupportedElementTypeError(f"{path}: unsupported ElementType {elem!r}")
    try:
        nx, ny, nz = (int(s) for s in header["DimSize"].split())
        sx, sy, sz = (float(s) for s in header["ElementSpacing"].split())
    except ValueError as e:
        raise ValidationError(f"{path}: malformed DimSize/ElementSpacing: {e}") from e

    dtype = _ELEMENT_TYPES[elem]
    raw_path = path.parent / header["ElementDataFile"]
    try:
        raw = raw_path.read_bytes()
    except OSError as e:
        raise IoFailureError(f"cannot read raw payload {raw_path}: {e}") from e
    expected = nx * ny * nz * dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(
            f"{raw_path}: DimSize {nx} {ny} {nz} implies {expected} bytes, file has {len(raw)}"
        )
    # disk order is x-fastest == C order for (nz, ny, nx)
    data = np.frombuffer(raw, dtype=dtype).reshape(nz, ny, nx)

    if role is None:
        role = _DEFAULT_ROLE_BY_ELEMENT[elem]
        if role is Role.PROBABILITY and (data.min() < 0.0 or data.max() > 1.0):
            role = Role.INTENSITY
    return Volume(data, (sz, sy, sx), role)


def save_volume(v: Volume, path: str | Path) -> None:
    """Write volume as .mhd header + sibling .raw payload.

    float64 payloads are cast to float32 (MET_FLOAT); all other role dtypes
    round-trip bit-exactly.
    """
    path = Path(path)
    elem = _DTYPE_TO_ELEMENT[v.data.dtype]
    out = v.data.astype(_ELEMENT_TYPES[elem], copy=False)
    raw_name = path.stem + ".raw"
    nz, ny, nx = v.shape
    sz, sy, sx = v.spacing
    lines = [
        "NDims = 3",
        f"DimSize = {nx} {ny} {nz}",
        f"ElementType = {elem}",
        f"ElementSpacing = {sx:.10g} {sy:.10g} {sz:.10g}",
        f"ElementDataFile = {raw_name}",
    ]
    try:
        path.write_text("\n".join(lines) + "\n")
        (path.parent / raw_name).write_bytes(out.tobytes())
    except OSError as e:
        raise IoFailureError(f"cannot write {path}: {e}") from e
