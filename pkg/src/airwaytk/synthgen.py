"""Deterministic synthetic airway-tree phantoms.

Trees are built from digital-line centerlines with quantized child
directions (45 deg diagonals by default, alternating the split plane
between y and x per generation) so that skeleton recovery is exact in the
documented regime: radius >= 2, branch separation >= 4, binary splits.
Tube rasterization, placement, and noise injection are all pure functions
of the TreeSpec, so identical parameters produce identical phantoms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import deque

import numpy as np
from scipy import ndimage

from .errors import DoesNotFitError, OutOfBoundsError, UnknownBranchError, ValidationError
from .morphology import binary_erosion
from .tree import Branch, BranchTable, label_branches, path_length_mm
from .volume import Connectivity, Role, Volume

Voxel = tuple[int, int, int]


@dataclass(frozen=True)
class TreeSpec:
    """Construction parameters for one phantom tree."""

    depth: int = 3
    children_per_branch: int = 2
    root_length_vox: int = 32
    length_decay: float = 0.6
    root_radius_vox: float = 2.0
    radius_decay: float = 1.0
    branch_angle_deg: float = 45.0
    seed: int = 0
    volume_shape: tuple[int, int, int] = (128, 128, 128)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.depth < 0:
            raise ValidationError("depth must be >= 0")
        if not 1 <= self.children_per_branch <= 3:
            raise ValidationError("children_per_branch must be in 1..3")
        if self.root_length_vox < 2:
            raise ValidationError("root_length_vox must be >= 2")
        if not 0.0 < self.length_decay <= 1.0 or not 0.0 < self.radius_decay <= 1.0:
            raise ValidationError("decay factors must lie in (0, 1]")
        if self.radius_at(self.depth) < 1.0:
            raise ValidationError("radius falls below 1 voxel at max depth")

    def length_at(self, gen: int) -> int:
        return max(2, int(round(self.root_length_vox * self.length_decay**gen)))

    def radius_at(self, gen: int) -> float:
        return self.root_radius_vox * self.radius_decay**gen


@dataclass(frozen=True)
class SyntheticTree:
    mask: Volume
    centerline: Volume
    table: BranchTable


# --- perturbation ops ---


@dataclass(frozen=True)
class DropBranch:
    branch_id: int
    table: BranchTable


@dataclass(frozen=True)
class AddNoiseComponent:
    size: int
    seed: int


@dataclass(frozen=True)
class ErodeOnce:
    connectivity: Connectivity = Connectivity.VERTEX26


def generate_tube(a: Voxel, b: Voxel, radius: float, shape: tuple[int, int, int]) -> Volume:
    """Binary tube: voxel is inside iff its distance to segment ab <= radius."""
    for p in (a, b):
        if not all(0 <= p[i] < shape[i] for i in range(3)):
            raise OutOfBoundsError(f"tube endpoint {p} outside shape {shape}")
    out = np.zeros(shape, dtype=np.uint8)
    _rasterize_tube(out, a, b, radius)
    return Volume(out, role=Role.BINARY)


def _rasterize_tube(
    out: np.ndarray,
    a: Voxel,
    b: Voxel,
    radius: float,
    flat_start: bool = False,
    flat_end: bool = False,
) -> None:
    """OR a capped cylinder into ``out``.

    Caps are hemispherical (distance to the segment) by default; a flat cap
    cuts the tube at the endpoint's perpendicular plane instead, which keeps
    the medial axis from overshooting the endpoint.
    """
    shape = out.shape
    lo = [max(0, int(np.floor(min(a[i], b[i]) - radius))) for i in range(3)]
    hi = [min(shape[i], int(np.ceil(max(a[i], b[i]) + radius)) + 1) for i in range(3)]
    grids = np.meshgrid(*(np.arange(lo[i], hi[i], dtype=np.float64) for i in range(3)), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    av = np.array(a, dtype=np.float64)
    ab = np.array(b, dtype=np.float64) - av
    denom = float(ab @ ab)
    if denom == 0.0:
        inside = np.linalg.norm(pts - av, axis=1) <= radius
    else:
        t = (pts - av) @ ab / denom
        tc = np.clip(t, 0.0, 1.0)
        d = np.linalg.norm(pts - (av + tc[:, None] * ab), axis=1)
        inside = d <= radius
        if flat_start:
            inside &= t >= 0.0
        if flat_end:
            inside &= t <= 1.0
    inside = inside.reshape(tuple(h - l for l, h in zip(lo, hi)))
    out[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] |= inside.astype(np.uint8)


def _child_directions(parent_gen: int, spec: TreeSpec) -> list[Voxel]:
    """Quantized child direction vectors; split plane alternates y/x."""
    axis = 1 if parent_gen % 2 == 0 else 2
    dz = 0 if spec.branch_angle_deg >= 67.5 else 1  # 90 deg -> lateral, else 45 deg diagonal
    plus = [dz, 0, 0]
    plus[axis] = 1
    minus = [dz, 0, 0]
    minus[axis] = -1
    dirs = [tuple(minus), tuple(plus)]  # minus first: smaller linear index
    if spec.children_per_branch == 1:
        return [dirs[1]]
    if spec.children_per_branch == 3:
        return [dirs[0], (1, 0, 0), dirs[1]]
    return dirs


def _build_centerlines(spec: TreeSpec) -> list[Branch]:
    """Integer branch centerlines plus the parent/child bookkeeping."""
    nz, ny, nx = spec.volume_shape
    margin = int(np.ceil(spec.root_radius_vox)) + 1
    start = (margin, ny // 2, nx // 2)
    branches: list[Branch] = []
    # queue entries: (start voxel, direction, generation, parent idx)
    queue: deque[tuple[Voxel, Voxel, int, int | None]] = deque([(start, (1, 0, 0), 0, None)])
    while queue:
        s, d, gen, parent_idx = queue.popleft()
        n = spec.length_at(gen)
        voxels = [(s[0] + k * d[0], s[1] + k * d[1], s[2] + k * d[2]) for k in range(n)]
        branch = Branch(
            id=len(branches) + 1,
            parent=None if parent_idx is None else branches[parent_idx].id,
            voxels=voxels,
            generation=gen,
            length_mm=path_length_mm(voxels, spec.spacing),
        )
        branches.append(branch)
        my_idx = len(branches) - 1
        if parent_idx is not None:
            branches[parent_idx].children.append(branch.id)
        if gen < spec.depth:
            end = voxels[-1]
            for cd in _child_directions(gen, spec):
                child_start = (end[0] + cd[0], end[1] + cd[1], end[2] + cd[2])
                queue.append((child_start, cd, gen + 1, my_idx))
    return branches


def _check_geometry(branches: list[Branch], spec: TreeSpec) -> None:
    nz, ny, nx = spec.volume_shape
    for b in branches:
        r = spec.radius_at(b.generation)
        for p in b.voxels:
            if not (r <= p[0] <= nz - 1 - r and r <= p[1] <= ny - 1 - r and r <= p[2] <= nx - 1 - r):
                raise DoesNotFitError(
                    f"branch {b.id} tube (radius {r:.1f}) around voxel {p} exceeds shape {spec.volume_shape}"
                )
    # non-adjacent branches must keep their tubes apart; siblings are exempt
    # near the shared junction where their tubes necessarily merge, with the
    # exempt prefix sized by how fast the two directions diverge
    arrs = [np.array(b.voxels, dtype=np.float64) for b in branches]
    for i, bi in enumerate(branches):
        for j in range(i + 1, len(branches)):
            bj = branches[j]
            if bi.id == bj.parent or bj.id == bi.parent:
                continue
            ri, rj = spec.radius_at(bi.generation), spec.radius_at(bj.generation)
            required = ri + rj + 2.0
            ai, aj = arrs[i], arrs[j]
            if bi.parent is not None and bi.parent == bj.parent:
                rate = float(np.linalg.norm((ai[1] - ai[0]) - (aj[1] - aj[0])))
                if rate == 0.0:
                    raise DoesNotFitError(f"sibling branches {bi.id} and {bj.id} share a direction")
                skip = int(np.ceil(required / rate))
                if len(ai) <= skip or len(aj) <= skip:
                    if not bi.children or not bj.children:
                        raise DoesNotFitError(
                            f"sibling branches {bi.id} and {bj.id} are too short "
                            f"({len(ai)}/{len(aj)} voxels) to separate their tubes"
                        )
                    continue  # descendants are checked without exemption
                ai = ai[skip:]
                aj = aj[skip:]
            dmin = float(np.sqrt(((ai[:, None, :] - aj[None, :, :]) ** 2).sum(axis=2)).min())
            if dmin < required:
                raise DoesNotFitError(
                    f"branches {bi.id} and {bj.id} come within {dmin:.2f} voxels "
                    f"(need >= {required:.2f}); tree does not fit"
                )


def generate_tree(spec: TreeSpec) -> SyntheticTree:
    """Rasterize the phantom: tube-union mask, axis centerline, true table."""
    branches = _build_centerlines(spec)
    _check_geometry(branches, spec)
    mask = np.zeros(spec.volume_shape, dtype=np.uint8)
    centerline = np.zeros(spec.volume_shape, dtype=np.uint8)
    for b in branches:
        r = spec.radius_at(b.generation)
        # flat caps at free tube ends (root inlet, leaf tips) keep the
        # skeleton on the construction axis; junction ends stay rounded so
        # parent and child tubes blend smoothly
        _rasterize_tube(
            mask,
            b.voxels[0],
            b.voxels[-1],
            r,
            flat_start=b.parent is None,
            flat_end=not b.children,
        )
        for p in b.voxels:
            centerline[p] = 1
    return SyntheticTree(
        mask=Volume(mask, spec.spacing, Role.BINARY),
        centerline=Volume(centerline, spec.spacing, Role.BINARY),
        table=BranchTable(branches, spec.spacing),
    )


def perturb(mask: Volume, op: DropBranch | AddNoiseComponent | ErodeOnce) -> Volume:
    """Controlled degradations for building FN/FP test cases."""
    if isinstance(op, DropBranch):
        ids = [b.id for b in op.table.branches]
        if op.branch_id not in ids:
            raise UnknownBranchError(f"branch id {op.branch_id} not in table (have {ids})")
        labels = label_branches(mask, op.table)
        out = mask.data.copy()
        out[labels.data == op.branch_id] = 0
        return Volume(out, mask.spacing, Role.BINARY)
    if isinstance(op, AddNoiseComponent):
        return _add_noise_component(mask, op.size, op.seed)
    if isinstance(op, ErodeOnce):
        return binary_erosion(mask, op.connectivity)
    raise ValidationError(f"unknown perturbation op {op!r}")


def _add_noise_component(mask: Volume, size: int, seed: int) -> Volume:
    """Grow a ``size``-voxel blob 26-disconnected from the mask."""
    if size < 1:
        raise ValidationError("noise component size must be >= 1")
    forbidden = ndimage.binary_dilation(mask.data.astype(bool), structure=np.ones((3, 3, 3), bool))
    free = ~forbidden
    free_idx = np.flatnonzero(free.ravel())
    if free_idx.size == 0:
        raise DoesNotFitError("no room for a disjoint noise component")
    rng = np.random.default_rng(seed)
    shape = mask.shape
    order = rng.permutation(free_idx)
    for start_flat in order[: min(64, order.size)]:
        blob = _grow_blob(free, int(start_flat), size, shape)
        if blob is not None:
            out = mask.data.copy()
            out.ravel()[blob] = 1
            return Volume(out, mask.spacing, Role.BINARY)
    raise DoesNotFitError(f"could not grow a {size}-voxel noise component")


def _grow_blob(free: np.ndarray, start_flat: int, size: int, shape: tuple[int, int, int]) -> list[int] | None:
    """Deterministic 6-connected BFS blob of exactly ``size`` free voxels."""
    ny_nx = shape[1] * shape[2]
    nx = shape[2]
    taken: list[int] = []
    seen = {start_flat}
    frontier = deque([start_flat])
    free_flat = free.ravel()
    while frontier and len(taken) < size:
        cur = frontier.popleft()
        taken.append(cur)
        z, rem = divmod(cur, ny_nx)
        y, x = divmod(rem, nx)
        nbrs = []
        if z > 0:
            nbrs.append(cur - ny_nx)
        if z < shape[0] - 1:
            nbrs.append(cur + ny_nx)
        if y > 0:
            nbrs.append(cur - nx)
        if y < shape[1] - 1:
            nbrs.append(cur + nx)
        if x > 0:
            nbrs.append(cur - 1)
        if x < shape[2] - 1:
            nbrs.append(cur + 1)
        for nb in sorted(nbrs):
            if nb not in seen and free_flat[nb]:
                seen.add(nb)
                frontier.append(nb)
    return taken if len(taken) == size else None
