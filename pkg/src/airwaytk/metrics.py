"""Tree-aware segmentation evaluation: DSC, Precision, Tree Detected ratio
(TD), Branch Detected ratio (BD), and Table-style aggregate reporting.

TD weighs each ground-truth centerline voxel by the mean physical length of
its incident skeleton edges (so diagonal runs count longer than axial runs)
and reports the covered fraction. BD counts a branch as detected when at
least ``theta`` of its centerline voxels lie inside the prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyMaskError,
    EmptyReportListError,
    EmptySkeletonError,
    EmptyTableError,
    RoleMismatchError,
    ShapeMismatchError,
)
from .morphology import keep_largest_component, skeletonize
from .tree import BranchTable, RootPolicy, build_skeleton_graph, decompose_branches
from .volume import Connectivity, Role, Volume, threshold

DEFAULT_THETA = 0.8


@dataclass(frozen=True)
class MetricsReport:
    case_id: str
    dsc: float
    precision: float
    td: float
    bd: float


@dataclass(frozen=True)
class AggregateReport:
    n_cases: int
    means: dict[str, float]
    stds: dict[str, float]  # population std
    theta: float = DEFAULT_THETA


def _binary_pair(pred: Volume, gt: Volume, op: str) -> tuple[np.ndarray, np.ndarray]:
    for v, name in ((pred, "pred"), (gt, "gt")):
        if v.role is not Role.BINARY:
            raise RoleMismatchError(f"{op}: {name} must be Binary, got {v.role}")
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"{op}: shapes differ, {pred.shape} vs {gt.shape}")
    return pred.data.astype(bool), gt.data.astype(bool)


def dsc(pred: Volume, gt: Volume) -> float:
    """Dice similarity 2*TP / (2*TP + FP + FN); both empty counts as 1."""
    p, g = _binary_pair(pred, gt, "dsc")
    tp = int((p & g).sum())
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def precision(pred: Volume, gt: Volume) -> float:
    """TP / (TP + FP); empty prediction scores 1 against empty gt, else 0."""
    p, g = _binary_pair(pred, gt, "precision")
    np_pred = int(p.sum())
    if np_pred == 0:
        return 1.0 if int(g.sum()) == 0 else 0.0
    return int((p & g).sum()) / np_pred


def _centerline_weights(gt_skeleton: Volume) -> tuple[np.ndarray, np.ndarray]:
    """(voxel coords, per-voxel length weight) for a skeleton volume."""
    coords = np.argwhere(gt_skeleton.data)
    if coords.shape[0] == 0:
        raise EmptySkeletonError("ground-truth skeleton is empty")
    sz, sy, sx = gt_skeleton.spacing
    scale = np.array([sz, sy, sx], dtype=np.float64)
    node_set = {tuple(int(c) for c in p) for p in coords}
    weights = np.empty(coords.shape[0], dtype=np.float64)
    offsets = Connectivity.VERTEX26.offsets()
    for i, p in enumerate(coords):
        lengths = []
        for dz, dy, dx in offsets:
            q = (int(p[0]) + int(dz), int(p[1]) + int(dy), int(p[2]) + int(dx))
            if q in node_set:
                step = np.array([dz, dy, dx], dtype=np.float64) * scale
                lengths.append(float(np.sqrt((step * step).sum())))
        # isolated voxel: fall back to the mean spacing as its length share
        weights[i] = float(np.mean(lengths)) if lengths else float(scale.mean())
    return coords, weights


def tree_detected(pred: Volume, gt_skeleton: Volume, spacing: tuple[float, float, float] | None = None) -> float:
    """Length-weighted fraction of the GT centerline covered by pred."""
    p, _ = _binary_pair(pred, gt_skeleton, "tree_detected")
    skel = gt_skeleton if spacing is None else Volume(gt_skeleton.data, spacing, Role.BINARY)
    coords, weights = _centerline_weights(skel)
    covered = p[coords[:, 0], coords[:, 1], coords[:, 2]]
    return float(weights[covered].sum() / weights.sum())


def branch_detected(pred: Volume, table: BranchTable, theta: float = DEFAULT_THETA) -> float:
    """Fraction of branches with centerline coverage >= theta."""
    if pred.role is not Role.BINARY:
        raise RoleMismatchError(f"branch_detected: pred must be Binary, got {pred.role}")
    if not table.branches:
        raise EmptyTableError("branch table is empty")
    p = pred.data.astype(bool)
    detected = 0
    for b in table.branches:
        for z, y, x in b.voxels:
            if not (0 <= z < pred.shape[0] and 0 <= y < pred.shape[1] and 0 <= x < pred.shape[2]):
                raise ShapeMismatchError(f"branch voxel {(z, y, x)} outside pred shape {pred.shape}")
        hits = sum(1 for z, y, x in b.voxels if p[z, y, x])
        if hits / len(b.voxels) >= theta:
            detected += 1
    return detected / len(table.branches)


def evaluate_case(
    pred_prob: Volume,
    gt: Volume,
    t: float = 0.5,
    postprocess: bool = False,
    theta: float = DEFAULT_THETA,
    case_id: str = "case",
) -> MetricsReport:
    """Threshold, optionally prune to the largest component, and score.

    The GT skeleton and branch table are derived internally from the mask,
    matching the workflow where only segmentations exist on disk.
    """
    if pred_prob.shape != gt.shape:
        raise ShapeMismatchError(f"evaluate_case: shapes differ, {pred_prob.shape} vs {gt.shape}")
    pred = threshold(pred_prob, t) if pred_prob.role is Role.PROBABILITY else pred_prob
    if postprocess:
        try:
            pred = keep_largest_component(pred, Connectivity.VERTEX26)
        except EmptyMaskError:
            pass  # empty prediction stays empty
    gt_skel = skeletonize(gt)
    graph = build_skeleton_graph(gt_skel)
    table = decompose_branches(graph, gt.spacing, RootPolicy.MIN_Z)
    return MetricsReport(
        case_id=case_id,
        dsc=dsc(pred, gt),
        precision=precision(pred, gt),
        td=tree_detected(pred, gt_skel),
        bd=branch_detected(pred, table, theta),
    )


_METRIC_NAMES = ("dsc", "precision", "td", "bd")


def aggregate_reports(reports: list[MetricsReport], theta: float = DEFAULT_THETA) -> AggregateReport:
    """Per-metric mean and population std over cases."""
    if not reports:
        raise EmptyReportListError("no reports to aggregate")
    means = {}
    stds = {}
    for name in _METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        means[name] = float(vals.mean())
        stds[name] = float(vals.std())  # ddof=0
    return AggregateReport(n_cases=len(reports), means=means, stds=stds, theta=theta)


def format_mean_std(mean: float, std: float) -> str:
    """Render one aggregate cell, e.g. '0.897±0.034'."""
    return f"{mean:.3f}±{std:.3f}"


def reports_to_csv(reports: list[MetricsReport]) -> str:
    lines = ["case_id,dsc,precision,td,bd"]
    for r in reports:
        lines.append(f"{r.case_id},{r.dsc:.6f},{r.precision:.6f},{r.td:.6f},{r.bd:.6f}")
    return "\n".join(lines) + "\n"


def aggregate_to_json(agg: AggregateReport) -> str:
    payload: dict = {
        name: {"mean": agg.means[name], "std": agg.stds[name]} for name in _METRIC_NAMES
    }
    payload["n_cases"] = agg.n_cases
    payload["theta"] = agg.theta
    return json.dumps(payload, indent=2)


def save_reports(reports: list[MetricsReport], csv_path: str | Path | None, json_path: str | Path | None, theta: float = DEFAULT_THETA) -> AggregateReport:
    agg = aggregate_reports(reports, theta)
    if csv_path is not None:
        Path(csv_path).write_text(reports_to_csv(reports))
    if json_path is not None:
        Path(json_path).write_text(aggregate_to_json(agg) + "\n")
    return agg
