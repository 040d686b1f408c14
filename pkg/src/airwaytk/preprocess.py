"""Sliding-window patch decomposition/reassembly, z-score normalization,
and deterministic augmentation transforms.

Patching pads the volume up to the patch shape when needed, tiles origins on
a stride lattice with the last origin clamped to the padded boundary, and
reassembles by averaging overlaps in a fixed origin order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonSquarePlaneError, RoleMismatchError, ShapeMismatchError, ValidationError
from .volume import Role, Volume

Dims = tuple[int, int, int]

GRID_FORMAT_VERSION = 1


def zscore_normalize(v: Volume) -> Volume:
    """Shift/scale to zero mean and unit population std.

    Constant input maps to all zeros (padded patches are frequently
    constant, so this is not an error).
    """
    if v.role is not Role.INTENSITY:
        raise RoleMismatchError(f"zscore_normalize requires an Intensity volume, got {v.role}")
    data = v.data.astype(np.float64)
    mu = data.mean()
    sigma = data.std()
    if sigma == 0.0:
        out = np.zeros(v.shape, dtype=np.float32)
    else:
        out = ((data - mu) / sigma).astype(np.float32)
    return Volume(out, v.spacing, Role.INTENSITY)


@dataclass(frozen=True)
class PatchGrid:
    """Patch corner lattice over a (possibly padded) volume.

    ``pad_value`` is None until extraction resolves the role-dependent
    padding policy; reassembly needs only shapes and origins.
    """

    patch_shape: Dims
    origins: tuple[Dims, ...]
    full_shape: Dims
    pad_value: float | None = None

    @property
    def padded_shape(self) -> Dims:
        return tuple(max(f, p) for f, p in zip(self.full_shape, self.patch_shape))


def _axis_origins(full: int, patch: int, stride: int) -> list[int]:
    padded = max(full, patch)
    last = padded - patch
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


def plan_patches(full_shape: Dims, patch_shape: Dims, stride: Dims | None = None) -> PatchGrid:
    """Plan patch origins covering every voxel of the padded volume.

    Stride defaults to the patch shape (non-overlapping tiling). Origins are
    the per-axis lattice {0, stride, 2*stride, ...} with the final origin
    clamped so the last patch ends exactly at the padded boundary. A stride
    larger than the patch can never cover the volume, so it is clamped to
    the patch shape per axis.
    """
    if stride is None:
        stride = patch_shape
    if any(p < 1 for p in patch_shape) or any(s < 1 for s in stride):
        raise ValidationError(f"patch_shape {patch_shape} and stride {stride} must be >= 1")
    if any(f < 1 for f in full_shape):
        raise ValidationError(f"full_shape must be positive, got {full_shape}")
    stride = tuple(min(s, p) for s, p in zip(stride, patch_shape))
    per_axis = [_axis_origins(f, p, s) for f, p, s in zip(full_shape, patch_shape, stride)]
    origins = tuple(
        (z, y, x) for z in per_axis[0] for y in per_axis[1] for x in per_axis[2]
    )
    return PatchGrid(tuple(patch_shape), origins, tuple(full_shape))


def _resolve_pad_value(v: Volume, grid: PatchGrid) -> float:
    if grid.pad_value is not None:
        return grid.pad_value
    if v.role is Role.INTENSITY:
        return float(v.data.min())
    return 0.0


def extract_patches(v: Volume, grid: PatchGrid) -> list[Volume]:
    """Cut the planned patches out of ``v``, padding with the role policy:
    Intensity pads with the volume minimum, Binary/Probability/Label with 0.
    """
    if tuple(v.shape) != grid.full_shape:
        raise ShapeMismatchError(f"grid planned for {grid.full_shape}, volume is {v.shape}")
    pad_value = _resolve_pad_value(v, grid)
    padded_shape = grid.padded_shape
    if padded_shape != v.shape:
        padded = np.full(padded_shape, pad_value, dtype=v.data.dtype)
        padded[: v.shape[0], : v.shape[1], : v.shape[2]] = v.data
    else:
        padded = v.data
    pz, py, px = grid.patch_shape
    patches = []
    for oz, oy, ox in grid.origins:
        chunk = padded[oz : oz + pz, oy : oy + py, ox : ox + px]
        patches.append(Volume(chunk.copy(), v.spacing, v.role))
    return patches


def reassemble(patches: list[Volume], grid: PatchGrid) -> Volume:
    """Invert :func:`extract_patches`: average overlaps, crop padding.

    Exact identity when patches do not overlap; within float32 rounding
    under overlap. Label volumes reassemble only without overlap (averaging
    integer labels is meaningless). Binary input whose averages stay in
    {0,1} stays Binary; otherwise the result is a Probability volume.
    """
    if len(patches) != len(grid.origins):
        raise ShapeMismatchError(f"grid has {len(grid.origins)} origins, got {len(patches)} patches")
    role = patches[0].role
    spacing = patches[0].spacing
    for p in patches:
        if tuple(p.shape) != grid.patch_shape:
            raise ShapeMismatchError(f"patch shape {p.shape} != grid patch_shape {grid.patch_shape}")

    padded_shape = grid.padded_shape
    acc = np.zeros(padded_shape, dtype=np.float64)
    cnt = np.zeros(padded_shape, dtype=np.int64)
    pz, py, px = grid.patch_shape
    for patch, (oz, oy, ox) in zip(patches, grid.origins):
        acc[oz : oz + pz, oy : oy + py, ox : ox + px] += patch.data
        cnt[oz : oz + pz, oy : oy + py, ox : ox + px] += 1
    if role is Role.LABEL and cnt.max() > 1:
        raise RoleMismatchError("cannot average overlapping Label patches")
    mean = acc / cnt
    nz, ny, nx = grid.full_shape
    mean = mean[:nz, :ny, :nx]

    if role is Role.BINARY:
        rounded = mean.astype(np.uint8)
        if np.array_equal(rounded, mean):
            return Volume(rounded, spacing, Role.BINARY)
        return Volume(mean.astype(np.float32), spacing, Role.PROBABILITY)
    if role is Role.LABEL:
        return Volume(mean.astype(np.uint32), spacing, Role.LABEL)
    return Volume(mean.astype(np.float32), spacing, role)


_AXIS_INDEX = {"z": 0, "y": 1, "x": 2}


def flip(v: Volume, axis: str) -> Volume:
    """Mirror along one axis ('z', 'y', or 'x'). Involution."""
    if axis not in _AXIS_INDEX:
        raise ValidationError(f"axis must be one of z/y/x, got {axis!r}")
    return Volume(np.flip(v.data, axis=_AXIS_INDEX[axis]).copy(), v.spacing, v.role)


def rotate90(v: Volume, axis: str, k: int) -> Volume:
    """Rotate k quarter-turns in the plane perpendicular to ``axis``.

    The two in-plane extents must match, otherwise the output grid would
    change shape.
    """
    if axis not in _AXIS_INDEX:
        raise ValidationError(f"axis must be one of z/y/x, got {axis!r}")
    a = _AXIS_INDEX[axis]
    plane = tuple(i for i in range(3) if i != a)
    if v.shape[plane[0]] != v.shape[plane[1]]:
        raise NonSquarePlaneError(
            f"rotate90 about {axis} needs equal extents on axes {plane}, shape is {v.shape}"
        )
    return Volume(np.rot90(v.data, k=k, axes=plane).copy(), v.spacing, v.role)


def scale_values(v: Volume, factor: float) -> Volume:
    """Multiply every voxel by ``factor`` (role invariants re-checked)."""
    if not np.isfinite(factor):
        raise ValidationError(f"scale factor must be finite, got {factor}")
    out = v.data.astype(np.float64) * factor
    if v.role in (Role.BINARY, Role.LABEL):
        out = out.astype(v.data.dtype)
    return Volume(out, v.spacing, v.role)


def random_augmentation(v: Volume, rng: np.random.Generator) -> Volume:
    """One random flip, rotate, and intensity scale, drawn from ``rng``.

    The library transforms themselves are deterministic; all randomness
    lives in the caller-supplied generator so runs are reproducible.
    """
    out = v
    axis = rng.choice(["z", "y", "x"])
    if rng.random() < 0.5:
        out = flip(out, axis)
    square_axes = [
        a
        for a in ("z", "y", "x")
        if len({out.shape[i] for i in range(3) if i != _AXIS_INDEX[a]}) == 1
    ]
    if square_axes and rng.random() < 0.5:
        out = rotate90(out, str(rng.choice(square_axes)), int(rng.integers(1, 4)))
    if out.role is Role.INTENSITY and rng.random() < 0.5:
        out = scale_values(out, float(rng.uniform(0.9, 1.1)))
    return out
