"""Shared fixtures and independent oracles.

Oracles here are deliberately written as plain per-voxel Python against the
definitions, never by calling back into the library's vectorized paths.
"""

from __future__ import annotations

import numpy as np
import pytest

from airwaytk.volume import Connectivity, Role, Volume


def make_volume(data, role=Role.INTENSITY, spacing=(1.0, 1.0, 1.0)):
    return Volume(np.asarray(data), spacing, role)


def random_binary(rng: np.random.Generator, max_side: int = 8) -> Volume:
    shape = tuple(int(s) for s in rng.integers(1, max_side + 1, size=3))
    density = rng.uniform(0.05, 0.95)
    return Volume((rng.random(shape) < density).astype(np.uint8), role=Role.BINARY)


def conn_offsets(conn: Connectivity) -> list[tuple[int, int, int]]:
    out = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dz == dy == dx == 0:
                    continue
                manhattan = abs(dz) + abs(dy) + abs(dx)
                if conn is Connectivity.FACE6 and manhattan > 1:
                    continue
                if conn is Connectivity.EDGE18 and manhattan > 2:
                    continue
                out.append((dz, dy, dx))
    return out


def flood_fill_components(mask: np.ndarray, conn: Connectivity) -> tuple[np.ndarray, int]:
    """Stack-based flood-fill labeling; components numbered by the smallest
    z-major linear index of any member voxel."""
    offsets = conn_offsets(conn)
    shape = mask.shape
    labels = np.zeros(shape, dtype=np.int64)
    count = 0
    for z in range(shape[0]):
        for y in range(shape[1]):
            for x in range(shape[2]):
                if mask[z, y, x] and labels[z, y, x] == 0:
                    count += 1
                    stack = [(z, y, x)]
                    labels[z, y, x] = count
                    while stack:
                        cz, cy, cx = stack.pop()
                        for dz, dy, dx in offsets:
                            nz, ny, nx = cz + dz, cy + dy, cx + dx
                            if (
                                0 <= nz < shape[0]
                                and 0 <= ny < shape[1]
                                and 0 <= nx < shape[2]
                                and mask[nz, ny, nx]
                                and labels[nz, ny, nx] == 0
                            ):
                                labels[nz, ny, nx] = count
                                stack.append((nz, ny, nx))
    return labels, count


def erosion_oracle(mask: np.ndarray, conn: Connectivity) -> np.ndarray:
    """Per-voxel erosion definition; out-of-bounds neighbors are background."""
    offsets = conn_offsets(conn)
    shape = mask.shape
    out = np.zeros_like(mask)
    for z in range(shape[0]):
        for y in range(shape[1]):
            for x in range(shape[2]):
                if not mask[z, y, x]:
                    continue
                keep = True
                for dz, dy, dx in offsets:
                    nz, ny, nx = z + dz, y + dy, x + dx
                    if not (0 <= nz < shape[0] and 0 <= ny < shape[1] and 0 <= nx < shape[2]):
                        keep = False
                        break
                    if not mask[nz, ny, nx]:
                        keep = False
                        break
                out[z, y, x] = 1 if keep else 0
    return out


def make_cylinder(radius: int = 2, length: int = 20, pad: int = 2) -> tuple[Volume, tuple]:
    """Axis-aligned z cylinder; returns (volume, (z0, z1, cy, cx))."""
    side = 2 * radius + 2 * pad + 1
    shape = (length + 2 * pad, side, side)
    c = radius + pad
    m = np.zeros(shape, dtype=np.uint8)
    for z in range(pad, pad + length):
        for y in range(side):
            for x in range(side):
                if (y - c) ** 2 + (x - c) ** 2 <= radius**2:
                    m[z, y, x] = 1
    return Volume(m, role=Role.BINARY), (pad, pad + length - 1, c, c)


def make_y_skeleton(arm: int = 4) -> Volume:
    """Y-shaped skeleton: three arms leaving one voxel at >= 135 degrees so
    the 26-adjacency graph stays acyclic."""
    size = 4 * arm + 5
    m = np.zeros((size, size, size), dtype=np.uint8)
    j = (2 * arm + 2, 2 * arm + 2, 2 * arm + 2)
    m[j] = 1
    for d in ((-1, 0, 0), (1, 1, 0), (1, -1, 0)):
        p = j
        for _ in range(arm):
            p = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
            m[p] = 1
    return Volume(m, role=Role.BINARY)


def branch_loss_oracle(pred: np.ndarray, labels: np.ndarray, smooth: float, per_branch_mean: bool) -> float:
    """Scalar-loop branch loss straight from the per-branch ratio definition."""
    ids = sorted({int(v) for v in labels.ravel() if v > 0})
    assert ids, "oracle needs at least one branch"
    ratios = []
    num_total = smooth
    den_total = smooth
    for b in ids:
        num = 0.0
        den = 0.0
        for z in range(labels.shape[0]):
            for y in range(labels.shape[1]):
                for x in range(labels.shape[2]):
                    if labels[z, y, x] == b:
                        num += float(pred[z, y, x])
                        den += 1.0
        ratios.append((num + smooth) / (den + smooth))
        num_total += num
        den_total += den
    if per_branch_mean:
        return 1.0 - sum(ratios) / len(ratios)
    return 1.0 - num_total / den_total


def centerline_ratio_oracle(pred: np.ndarray, e_gt: np.ndarray, smooth: float) -> float:
    """Scalar-loop coverage ratio of a (given) GT centerline by pred values."""
    num = smooth
    den = smooth
    for z in range(e_gt.shape[0]):
        for y in range(e_gt.shape[1]):
            for x in range(e_gt.shape[2]):
                if e_gt[z, y, x]:
                    num += float(pred[z, y, x])
                    den += 1.0
    return 1.0 - num / den


def centerline_weight_oracle(skel: np.ndarray, spacing) -> dict[tuple, float]:
    """Per-voxel centerline length weights: mean incident 26-edge length."""
    sz, sy, sx = spacing
    pts = [tuple(int(c) for c in p) for p in np.argwhere(skel)]
    ptset = set(pts)
    weights = {}
    for p in pts:
        lengths = []
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dz == dy == dx == 0:
                        continue
                    if (p[0] + dz, p[1] + dy, p[2] + dx) in ptset:
                        lengths.append(((dz * sz) ** 2 + (dy * sy) ** 2 + (dx * sx) ** 2) ** 0.5)
        weights[p] = sum(lengths) / len(lengths) if lengths else (sz + sy + sx) / 3.0
    return weights


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
