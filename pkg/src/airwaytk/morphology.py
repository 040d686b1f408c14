"""3D connected-component analysis, largest-component pruning, binary
erosion, and topology-preserving skeletonization.

Component labeling is deterministic: components are numbered 1..count in
order of their smallest z-major linear index. Erosion treats out-of-bounds
neighbors as background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _thinning
from .errors import EmptyMaskError, RoleMismatchError
from .volume import Connectivity, Role, Volume

_STRUCTURES = {
    Connectivity.FACE6: ndimage.generate_binary_structure(3, 1),
    Connectivity.EDGE18: ndimage.generate_binary_structure(3, 2),
    Connectivity.VERTEX26: ndimage.generate_binary_structure(3, 3),
}


def _require_binary(v: Volume, op: str) -> None:
    if v.role is not Role.BINARY:
        raise RoleMismatchError(f"{op} requires a Binary volume, got {v.role}")


@dataclass(frozen=True)
class ComponentLabeling:
    """Labeled components of a binary mask: ids 1..count, 0 background."""

    labels: Volume
    count: int
    volumes: np.ndarray  # volumes[i] = voxel count of label i+1


def connected_components(mask: Volume, conn: Connectivity = Connectivity.VERTEX26) -> ComponentLabeling:
    """Label conn-connected foreground regions.

    Two foreground voxels share a label iff a conn-path of foreground voxels
    joins them. Labels are renumbered so component 1 contains the smallest
    linear index, component 2 the next, and so on.
    """
    _require_binary(mask, "connected_components")
    raw, n = ndimage.label(mask.data, structure=_STRUCTURES[conn])
    if n == 0:
        labels = np.zeros(mask.shape, dtype=np.uint32)
        return ComponentLabeling(Volume(labels, mask.spacing, Role.LABEL), 0, np.zeros(0, dtype=np.int64))
    flat = raw.ravel()
    fg = np.flatnonzero(flat)
    first = np.zeros(n + 1, dtype=np.int64)
    first[flat[fg][::-1]] = fg[::-1]  # reversed scatter: earliest index wins
    order = np.argsort(first[1:], kind="stable")  # old labels ranked by first index
    perm = np.zeros(n + 1, dtype=np.uint32)
    perm[order + 1] = np.arange(1, n + 1, dtype=np.uint32)
    labels = perm[raw]
    volumes = np.bincount(labels.ravel(), minlength=n + 1)[1:].astype(np.int64)
    return ComponentLabeling(Volume(labels, mask.spacing, Role.LABEL), int(n), volumes)


def component_volumes(labeling: ComponentLabeling) -> np.ndarray:
    """Exact voxel count per label, recomputed from the label volume."""
    if labeling.count == 0:
        return np.zeros(0, dtype=np.int64)
    return np.bincount(labeling.labels.data.ravel(), minlength=labeling.count + 1)[1:].astype(np.int64)


def keep_largest_component(mask: Volume, conn: Connectivity = Connectivity.VERTEX26) -> Volume:
    """Keep only the largest component; ties go to the smallest label id."""
    _require_binary(mask, "keep_largest_component")
    labeling = connected_components(mask, conn)
    if labeling.count == 0:
        raise EmptyMaskError("mask has no foreground voxels")
    best = int(np.argmax(labeling.volumes)) + 1  # argmax returns first max
    out = (labeling.labels.data == best).astype(np.uint8)
    return Volume(out, mask.spacing, Role.BINARY)


def binary_erosion(mask: Volume, conn: Connectivity = Connectivity.VERTEX26) -> Volume:
    """A voxel survives iff it and all its conn-neighbors are foreground;
    out-of-bounds neighbors count as background."""
    _require_binary(mask, "binary_erosion")
    out = ndimage.binary_erosion(mask.data.astype(bool), structure=_STRUCTURES[conn], border_value=0)
    return Volume(out.astype(np.uint8), mask.spacing, Role.BINARY)


def skeletonize(mask: Volume) -> Volume:
    """Iteratively thin a binary mask to its unit-width centerline.

    Topology-preserving: the skeleton is a subset of the mask with the same
    number of 26-connected components, and re-skeletonizing is a no-op.
    """
    _require_binary(mask, "skeletonize")
    if not mask.data.any():
        return Volume(np.zeros(mask.shape, dtype=np.uint8), mask.spacing, Role.BINARY)
    return Volume(_thinning.thin(mask.data), mask.spacing, Role.BINARY)
