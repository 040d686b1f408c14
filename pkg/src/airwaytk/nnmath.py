"""Branch-aware segmentation losses, dropout primitives, and the dilated
receptive-field calculator.

All reductions run in float64 in fixed z-major order, so results are
bit-reproducible regardless of caller threading. Losses are 0 at a perfect
prediction (up to the smoothing term) and 1 at total miss; BCE is the usual
unbounded mean cross-entropy.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidProbabilityError,
    NoBranchesError,
    NonFiniteInputError,
    NonPositiveDilationError,
    RoleMismatchError,
    ShapeMismatchError,
    ValidationError,
)
from .morphology import skeletonize
from .volume import Role, Volume, threshold

DEFAULT_SMOOTH = 1e-6
DEFAULT_BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Weights for the dice / bce / branch / centerline terms."""

    w1: float = 0.2
    w2: float = 0.2
    w3: float = 0.3
    w4: float = 0.3

    def __post_init__(self):
        vals = (self.w1, self.w2, self.w3, self.w4)
        if any(not math.isfinite(w) or w < 0 for w in vals):
            raise ValidationError(f"weights must be finite and >= 0, got {vals}")


class BranchLossMode(enum.Enum):
    PER_BRANCH_MEAN = "per-branch-mean"
    GLOBAL = "global"


class CenterlineVariant(enum.Enum):
    SKELETON_PRODUCT = "skeleton-product"
    CENTERLINE_RECALL = "centerline-recall"


def _check_pair(pred: Volume, other: Volume, op: str) -> tuple[np.ndarray, np.ndarray]:
    if pred.shape != other.shape:
        raise ShapeMismatchError(f"{op}: shapes differ, {pred.shape} vs {other.shape}")
    return pred.data.astype(np.float64), other.data.astype(np.float64)


def dice_loss(pred: Volume, gt: Volume, smooth: float = DEFAULT_SMOOTH) -> float:
    """Soft Dice loss: 1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s)."""
    p, g = _check_pair(pred, gt, "dice_loss")
    inter = float((p * g).sum())
    return 1.0 - (2.0 * inter + smooth) / (float(p.sum()) + float(g.sum()) + smooth)


def bce_loss(pred: Volume, gt: Volume, eps: float = DEFAULT_BCE_EPS) -> float:
    """Mean binary cross-entropy with predictions clamped to [eps, 1-eps]."""
    p, g = _check_pair(pred, gt, "bce_loss")
    p = np.clip(p, eps, 1.0 - eps)
    return float(-(g * np.log(p) + (1.0 - g) * np.log(1.0 - p)).mean())


def branch_loss(
    pred: Volume,
    gt_labels: Volume,
    smooth: float = DEFAULT_SMOOTH,
    mode: BranchLossMode = BranchLossMode.PER_BRANCH_MEAN,
) -> float:
    """Branch-level overlap loss against a branch-labeled ground truth.

    Each positive label id is one branch; its indicator selects the branch's
    voxels. Per-branch mode averages the per-branch coverage ratios, which
    weights small distal branches equally with the trachea; global mode
    pools numerator and denominator over the whole tree first.
    """
    if gt_labels.role is not Role.LABEL:
        raise RoleMismatchError(f"branch_loss needs Label ground truth, got {gt_labels.role}")
    if pred.shape != gt_labels.shape:
        raise ShapeMismatchError(f"branch_loss: shapes differ, {pred.shape} vs {gt_labels.shape}")
    p = pred.data.astype(np.float64)
    labels = gt_labels.data
    ids = np.unique(labels)
    ids = ids[ids > 0]
    if ids.size == 0:
        raise NoBranchesError("gt_labels has no positive branch labels")
    if mode is BranchLossMode.PER_BRANCH_MEAN:
        ratios = []
        for b in ids:
            indicator = labels == b
            num = float(p[indicator].sum()) + smooth
            den = float(indicator.sum()) + smooth
            ratios.append(num / den)
        return 1.0 - float(np.mean(ratios))
    num = smooth
    den = smooth
    for b in ids:
        indicator = labels == b
        num += float(p[indicator].sum())
        den += float(indicator.sum())
    return 1.0 - num / den


def centerline_loss(
    pred: Volume,
    gt_labels: Volume,
    t: float = 0.5,
    smooth: float = DEFAULT_SMOOTH,
    variant: CenterlineVariant = CenterlineVariant.SKELETON_PRODUCT,
) -> float:
    """Centerline coverage loss.

    The GT centerline is the skeleton of the labeled foreground. The
    skeleton-product variant also skeletonizes the thresholded prediction
    and scores skeleton overlap; the recall variant scores the soft
    prediction directly on the GT centerline, which degrades smoothly when
    the predicted skeleton wobbles off-axis.
    """
    if gt_labels.role is not Role.LABEL:
        raise RoleMismatchError(f"centerline_loss needs Label ground truth, got {gt_labels.role}")
    if pred.shape != gt_labels.shape:
        raise ShapeMismatchError(f"centerline_loss: shapes differ, {pred.shape} vs {gt_labels.shape}")
    gt_fg = Volume((gt_labels.data > 0).astype(np.uint8), gt_labels.spacing, Role.BINARY)
    e_gt = skeletonize(gt_fg).data.astype(np.float64)
    if variant is CenterlineVariant.SKELETON_PRODUCT:
        e_pred = skeletonize(threshold(pred, t)).data.astype(np.float64)
        num = float((e_pred * e_gt).sum()) + smooth
    else:
        num = float((pred.data.astype(np.float64) * e_gt).sum()) + smooth
    den = float(e_gt.sum()) + smooth
    return 1.0 - num / den


def total_loss(l_dice: float, l_bce: float, l_branch: float, l_centerline: float, w: LossWeights) -> float:
    """Weighted sum of the four components."""
    parts = (l_dice, l_bce, l_branch, l_centerline)
    if any(not math.isfinite(v) for v in parts):
        raise NonFiniteInputError(f"loss components must be finite, got {parts}")
    return l_dice * w.w1 + l_bce * w.w2 + l_branch * w.w3 + l_centerline * w.w4


# --- dropout primitives ---


def dropout_mask(shape: tuple[int, int, int], p: float, seed: int) -> Volume:
    """I.i.d. Bernoulli(p) retain mask, deterministic for a given seed."""
    if not 0.0 < p <= 1.0:
        raise InvalidProbabilityError(f"retain probability must be in (0,1], got {p}")
    rng = np.random.default_rng(seed)
    mask = (rng.random(shape) < p).astype(np.uint8)
    return Volume(mask, role=Role.BINARY)


def dropout_forward(x: Volume, m: Volume, p: float) -> Volume:
    """Elementwise H = p * m * x (train-time scaling as formulated)."""
    if x.shape != m.shape:
        raise ShapeMismatchError(f"dropout_forward: shapes differ, {x.shape} vs {m.shape}")
    out = p * m.data.astype(np.float64) * x.data.astype(np.float64)
    return Volume(out, x.spacing, Role.INTENSITY)


def dropout_backward(g: Volume, m: Volume, p: float) -> Volume:
    """Gradient pass-through: g' = p * m * g (chain rule of the forward)."""
    if g.shape != m.shape:
        raise ShapeMismatchError(f"dropout_backward: shapes differ, {g.shape} vs {m.shape}")
    out = p * m.data.astype(np.float64) * g.data.astype(np.float64)
    return Volume(out, g.spacing, Role.INTENSITY)


def receptive_field(dilations: list[int]) -> int:
    """Receptive field of stacked dilated 3-kernels along one axis:
    RF = 1 + 2 * sum(dilations). Empty stack sees a single element."""
    for d in dilations:
        if int(d) != d or d < 1:
            raise NonPositiveDilationError(f"dilation rates must be positive integers, got {dilations}")
    return 1 + 2 * int(sum(int(d) for d in dilations))
