"""Monte-Carlo-dropout inference aggregation.

The toolkit never runs a network itself: predictions arrive either as an
injected callable (library use) or as an ordered list of probability
volumes loaded from disk (CLI use). Aggregation reduces the stack to an
elementwise mean and population variance; the returned ``out`` volume
equals the mean and both are kept for interface fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EmptyStackError, PredictorFailureError, ShapeMismatchError, ValidationError
from .volume import Role, Volume

Predictor = Callable[[Volume, int], Volume]


@dataclass(frozen=True)
class PredictionStack:
    """Ordered stochastic predictions over one input, identical grids."""

    preds: tuple[Volume, ...]

    def __post_init__(self):
        if not self.preds:
            raise EmptyStackError("prediction stack is empty")
        first = self.preds[0]
        for i, p in enumerate(self.preds):
            if p.role is not Role.PROBABILITY:
                raise ValidationError(f"stack member {i} has role {p.role}, need Probability")
            if not first.same_grid(p):
                raise ShapeMismatchError(
                    f"stack member {i} grid {p.shape}/{p.spacing} differs from {first.shape}/{first.spacing}"
                )

    @property
    def n_drop(self) -> int:
        return len(self.preds)


@dataclass(frozen=True)
class UncertaintySummary:
    mean: Volume
    variance: Volume  # population variance, in [0, 0.25] for probabilities
    out: Volume  # == mean, kept as a separate field for interface fidelity


def iteration_seed(seed: int, iteration: int) -> int:
    """Stable per-iteration seed derived from (seed, iteration)."""
    return int(np.random.SeedSequence([seed, iteration]).generate_state(1)[0])


def run_mc(predictor: Predictor, input_volume: Volume, n_drop: int, seed: int = 0) -> PredictionStack:
    """Invoke ``predictor(input, derived_seed)`` n_drop times.

    Seeds are derived deterministically from (seed, iteration), so a seeded
    stochastic predictor reproduces the exact same stack across runs.
    """
    if n_drop < 1:
        raise ValidationError(f"n_drop must be >= 1, got {n_drop}")
    preds = []
    for i in range(n_drop):
        try:
            pred = predictor(input_volume, iteration_seed(seed, i))
        except Exception as e:  # noqa: BLE001 - annotate with the failing iteration
            raise PredictorFailureError(i, e) from e
        preds.append(pred)
    return PredictionStack(tuple(preds))


def aggregate(stack: PredictionStack) -> UncertaintySummary:
    """Elementwise mean and population variance (divide by n_drop)."""
    data = np.stack([p.data.astype(np.float64) for p in stack.preds], axis=0)
    mean = data.mean(axis=0)
    var = np.square(data - mean).mean(axis=0)
    spacing = stack.preds[0].spacing
    mean_vol = Volume(mean, spacing, Role.PROBABILITY)
    return UncertaintySummary(
        mean=mean_vol,
        variance=Volume(var, spacing, Role.INTENSITY),
        out=Volume(mean.copy(), spacing, Role.PROBABILITY),
    )


def uncertainty_mask(summary: UncertaintySummary, tau: float) -> Volume:
    """Binary map of voxels whose variance exceeds ``tau``."""
    if tau < 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    mask = (summary.variance.data > tau).astype(np.uint8)
    return Volume(mask, summary.variance.spacing, Role.BINARY)
