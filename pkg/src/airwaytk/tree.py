"""Skeleton graphs, parent-child branch decomposition, and propagation of
branch labels to full segmentations.

A branch is a maximal path of degree<=2 skeleton voxels between endpoints
and branch points. Branch-point voxels belong to the parent-side branch, so
every child branch starts one voxel distal to the bifurcation it hangs off.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CyclicSkeletonError,
    EmptyGraphError,
    EmptyTableError,
    RoleMismatchError,
    ShapeMismatchError,
    ValidationError,
)
from .volume import Connectivity, Role, Volume

TABLE_FORMAT_VERSION = 1

Voxel = tuple[int, int, int]


@dataclass(frozen=True)
class SkeletonGraph:
    """26-connectivity adjacency over skeleton voxels."""

    nodes: list[Voxel]
    adjacency: dict[Voxel, list[Voxel]]
    shape: tuple[int, int, int]

    def degree(self, node: Voxel) -> int:
        return len(self.adjacency[node])


@dataclass
class Branch:
    id: int
    parent: int | None
    children: list[int] = field(default_factory=list)
    voxels: list[Voxel] = field(default_factory=list)
    generation: int = 0
    length_mm: float = 0.0

    @property
    def length_vox(self) -> int:
        return len(self.voxels)


@dataclass
class BranchTable:
    """Parsed tree: branch ids are consecutive 1..B in breadth-first order."""

    branches: list[Branch]
    spacing: tuple[float, float, float]

    def __len__(self) -> int:
        return len(self.branches)

    def by_id(self, branch_id: int) -> Branch:
        return self.branches[branch_id - 1]

    def roots(self) -> list[Branch]:
        return [b for b in self.branches if b.parent is None]


class RootPolicy(enum.Enum):
    MIN_Z = "min-z"
    MAX_Z = "max-z"


def build_skeleton_graph(skeleton: Volume) -> SkeletonGraph:
    """All foreground voxels as nodes, 26-adjacent pairs as edges."""
    if skeleton.role is not Role.BINARY:
        raise RoleMismatchError(f"build_skeleton_graph requires Binary, got {skeleton.role}")
    coords = np.argwhere(skeleton.data)
    nodes = [tuple(int(c) for c in p) for p in coords]
    node_set = set(nodes)
    offsets = Connectivity.VERTEX26.offsets()
    adjacency: dict[Voxel, list[Voxel]] = {}
    for p in nodes:
        nbrs = []
        for dz, dy, dx in offsets:
            q = (p[0] + int(dz), p[1] + int(dy), p[2] + int(dx))
            if q in node_set:
                nbrs.append(q)
        adjacency[p] = nbrs
    return SkeletonGraph(nodes, adjacency, skeleton.shape)


def _step_length_mm(a: Voxel, b: Voxel, spacing: tuple[float, float, float]) -> float:
    sz, sy, sx = spacing
    return float(np.sqrt(((a[0] - b[0]) * sz) ** 2 + ((a[1] - b[1]) * sy) ** 2 + ((a[2] - b[2]) * sx) ** 2))


def path_length_mm(voxels: list[Voxel], spacing: tuple[float, float, float]) -> float:
    return sum(_step_length_mm(a, b, spacing) for a, b in zip(voxels, voxels[1:]))


def _linear_index(p: Voxel, shape: tuple[int, int, int]) -> int:
    return p[0] * shape[1] * shape[2] + p[1] * shape[2] + p[2]


def _components(g: SkeletonGraph) -> list[list[Voxel]]:
    seen: set[Voxel] = set()
    comps = []
    for start in sorted(g.nodes, key=lambda p: _linear_index(p, g.shape)):
        if start in seen:
            continue
        comp = []
        stack = [start]
        seen.add(start)
        while stack:
            cur = stack.pop()
            comp.append(cur)
            for nb in g.adjacency[cur]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        comps.append(comp)
    return comps


def _pick_root(comp: list[Voxel], g: SkeletonGraph, policy: RootPolicy | Voxel) -> Voxel:
    if isinstance(policy, tuple):
        root = tuple(int(c) for c in policy)
        if root not in g.adjacency:
            raise ValidationError(f"explicit root {root} is not a skeleton voxel")
        if root not in comp:
            raise ValidationError(f"explicit root {root} not in this component")
        if g.degree(root) > 1:
            raise ValidationError(f"explicit root {root} has degree {g.degree(root)}, need an endpoint")
        return root
    ends = [p for p in comp if g.degree(p) <= 1]
    # degree-0 single voxels are their own endpoint; trees always have ends
    if policy is RootPolicy.MIN_Z:
        return min(ends, key=lambda p: (p[0], _linear_index(p, g.shape)))
    return min(ends, key=lambda p: (-p[0], _linear_index(p, g.shape)))


def decompose_branches(
    g: SkeletonGraph,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    root_policy: RootPolicy | Voxel = RootPolicy.MIN_Z,
) -> BranchTable:
    """Split an acyclic skeleton graph into parent-child labeled branches.

    Components are processed in order of their smallest linear index; within
    a component, branches are numbered breadth-first from the root branch,
    children ordered by the linear index of their first voxel. Cycles are an
    error: parent-child labeling is undefined on loops.

    ``root_policy``: RootPolicy.MIN_Z / MAX_Z, or an explicit endpoint voxel.
    """
    if not g.nodes:
        raise EmptyGraphError("skeleton graph has no nodes")
    comps = _components(g)
    n_edges = sum(len(a) for a in g.adjacency.values()) // 2
    if n_edges != len(g.nodes) - len(comps):
        raise CyclicSkeletonError(
            f"graph has {n_edges} edges over {len(g.nodes)} nodes in {len(comps)} components; "
            "skeleton contains a loop"
        )

    branches: list[Branch] = []
    for comp in comps:
        root = _pick_root(comp, g, root_policy)
        if len(comp) == 1:
            branches.append(Branch(id=len(branches) + 1, parent=None, voxels=[root], generation=0))
            continue
        # queue of pending walks: (start voxel, came-from voxel, parent branch idx)
        pending: deque[tuple[Voxel, Voxel | None, int | None]] = deque([(root, None, None)])
        while pending:
            start, came_from, parent_idx = pending.popleft()
            voxels = [start]
            prev, cur = came_from, start
            if g.degree(start) < 3:  # else: start sits on another junction; branch is just [start]
                while True:
                    nxts = [q for q in g.adjacency[cur] if q != prev]
                    if len(nxts) != 1:
                        break  # 0 -> endpoint; >=2 -> junction already appended
                    prev, cur = cur, nxts[0]
                    voxels.append(cur)
                    if g.degree(cur) >= 3:
                        break  # junction voxel stays on this (parent-side) branch
            branch = Branch(
                id=len(branches) + 1,
                parent=None if parent_idx is None else branches[parent_idx].id,
                voxels=voxels,
                generation=0 if parent_idx is None else branches[parent_idx].generation + 1,
                length_mm=path_length_mm(voxels, spacing),
            )
            branches.append(branch)
            my_idx = len(branches) - 1
            if parent_idx is not None:
                branches[parent_idx].children.append(branch.id)
            tip = voxels[-1]
            before_tip = voxels[-2] if len(voxels) >= 2 else came_from
            offspring = [q for q in g.adjacency[tip] if q != before_tip]
            for q in sorted(offspring, key=lambda p: _linear_index(p, g.shape)):
                pending.append((q, tip, my_idx))
    return BranchTable(branches, tuple(float(s) for s in spacing))


def _edge_betweenness(adjacency: dict[Voxel, set[Voxel]], shape) -> dict[tuple[Voxel, Voxel], float]:
    """Brandes shortest-path edge betweenness (unweighted)."""
    betweenness: dict[tuple[Voxel, Voxel], float] = {}
    nodes = sorted(adjacency, key=lambda p: _linear_index(p, shape))
    for s in nodes:
        sigma = {v: 0.0 for v in nodes}
        dist = {v: -1 for v in nodes}
        preds: dict[Voxel, list[Voxel]] = {v: [] for v in nodes}
        sigma[s] = 1.0
        dist[s] = 0
        order = []
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in sorted(adjacency[v], key=lambda p: _linear_index(p, shape)):
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = {v: 0.0 for v in nodes}
        for w in reversed(order):
            for v in preds[w]:
                share = sigma[v] / sigma[w] * (1.0 + delta[w])
                edge = (v, w) if _linear_index(v, shape) < _linear_index(w, shape) else (w, v)
                betweenness[edge] = betweenness.get(edge, 0.0) + share
                delta[v] += share
    return betweenness


def break_cycles(g: SkeletonGraph) -> SkeletonGraph:
    """Remove one maximum-betweenness edge per loop until the graph is a forest.

    Opt-in repair for predictions whose skeleton contains loops; ties are
    broken toward the edge with the smallest (linear-index) endpoints so the
    result is deterministic.
    """
    adjacency = {p: set(nbrs) for p, nbrs in g.adjacency.items()}
    shape = g.shape

    def excess_edges() -> int:
        n_edges = sum(len(v) for v in adjacency.values()) // 2
        seen: set[Voxel] = set()
        comps = 0
        for start in adjacency:
            if start in seen:
                continue
            comps += 1
            stack = [start]
            seen.add(start)
            while stack:
                cur = stack.pop()
                for nb in adjacency[cur]:
                    if nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
        return n_edges - (len(adjacency) - comps)

    while excess_edges() > 0:
        betweenness = _edge_betweenness(adjacency, shape)
        # only edges on some cycle are safe to drop: bridges would split the graph
        cycle_edges = [e for e in betweenness if _on_cycle(adjacency, e)]
        best = max(
            cycle_edges,
            key=lambda e: (
                betweenness[e],
                (-_linear_index(e[0], shape), -_linear_index(e[1], shape)),
            ),
        )
        adjacency[best[0]].discard(best[1])
        adjacency[best[1]].discard(best[0])
    new_adj = {
        p: sorted(nbrs, key=lambda q: _linear_index(q, shape)) for p, nbrs in adjacency.items()
    }
    return SkeletonGraph(g.nodes, new_adj, shape)


def _on_cycle(adjacency: dict[Voxel, set[Voxel]], edge: tuple[Voxel, Voxel]) -> bool:
    """True when the edge's endpoints stay connected without the edge."""
    a, b = edge
    seen = {a}
    stack = [a]
    while stack:
        cur = stack.pop()
        for nb in adjacency[cur]:
            if cur == a and nb == b:
                continue
            if nb == b:
                return True
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return False


def label_branches(mask: Volume, table: BranchTable) -> Volume:
    """Assign each foreground voxel the id of the branch owning its nearest
    centerline voxel (Euclidean in mm; ties go to the smaller branch id)."""
    if not table.branches:
        raise EmptyTableError("branch table is empty")
    if mask.role is not Role.BINARY:
        raise RoleMismatchError(f"label_branches requires a Binary mask, got {mask.role}")
    centers = []
    ids = []
    for b in table.branches:
        for p in b.voxels:
            centers.append(p)
            ids.append(b.id)
    centers = np.array(centers, dtype=np.float64)
    ids = np.array(ids, dtype=np.uint32)
    for p in centers:
        z, y, x = int(p[0]), int(p[1]), int(p[2])
        if not (0 <= z < mask.shape[0] and 0 <= y < mask.shape[1] and 0 <= x < mask.shape[2]):
            raise ShapeMismatchError(f"centerline voxel {(z, y, x)} outside mask shape {mask.shape}")

    sz, sy, sx = mask.spacing
    scale = np.array([sz, sy, sx], dtype=np.float64)
    centers_mm = centers * scale

    fg = np.argwhere(mask.data).astype(np.float64)
    out = np.zeros(mask.shape, dtype=np.uint32)
    if fg.size == 0:
        return Volume(out, mask.spacing, Role.LABEL)
    fg_idx = np.argwhere(mask.data)
    chunk = max(1, int(2_000_000 // max(1, len(centers))))
    big = np.uint32(np.iinfo(np.uint32).max)
    for lo in range(0, len(fg), chunk):
        part = fg[lo : lo + chunk] * scale
        d2 = ((part[:, None, :] - centers_mm[None, :, :]) ** 2).sum(axis=2)
        dmin = d2.min(axis=1, keepdims=True)
        tied = d2 == dmin  # exact float equality: symmetric cases compute identically
        winner = np.where(tied, ids[None, :], big).min(axis=1)
        sel = fg_idx[lo : lo + chunk]
        out[sel[:, 0], sel[:, 1], sel[:, 2]] = winner
    return Volume(out, mask.spacing, Role.LABEL)


def tree_stats(table: BranchTable) -> dict[str, float | int]:
    """Totals over the table: branch count, summed length, deepest generation."""
    if not table.branches:
        raise EmptyTableError("branch table is empty")
    return {
        "branch_count": len(table.branches),
        "total_length_mm": float(sum(b.length_mm for b in table.branches)),
        "max_generation": max(b.generation for b in table.branches),
    }


# --- JSON serialization (stable schema, see TABLE_FORMAT_VERSION) ---


def table_to_json(table: BranchTable) -> str:
    payload = {
        "branches": [
            {
                "id": b.id,
                "parent": b.parent,
                "children": list(b.children),
                "generation": b.generation,
                "length_mm": b.length_mm,
                "voxels": [[int(z), int(y), int(x)] for z, y, x in b.voxels],
            }
            for b in table.branches
        ]
    }
    return json.dumps(payload, indent=2, sort_keys=False)


def save_table(table: BranchTable, path: str | Path) -> None:
    Path(path).write_text(table_to_json(table) + "\n")


def load_table(path: str | Path, spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> BranchTable:
    payload = json.loads(Path(path).read_text())
    branches = []
    for rec in payload["branches"]:
        branches.append(
            Branch(
                id=int(rec["id"]),
                parent=None if rec["parent"] is None else int(rec["parent"]),
                children=[int(c) for c in rec["children"]],
                voxels=[tuple(int(c) for c in v) for v in rec["voxels"]],
                generation=int(rec["generation"]),
                length_mm=float(rec["length_mm"]),
            )
        )
    return BranchTable(branches, spacing)
