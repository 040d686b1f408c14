"""Volumetric airway-tree analysis toolkit.

Branch-level loss functions, centerline extraction via topology-preserving
thinning, Monte-Carlo-dropout uncertainty aggregation, connected-component
post-processing, and tree-aware evaluation metrics, plus a deterministic
synthetic-tree generator used by the verification suite.
"""

__version__ = "0.1.0"

from .volume import Connectivity, Role, Volume, load_volume, neighbors, save_volume, threshold, volumes_equal

__all__ = [
    "Connectivity",
    "Role",
    "Volume",
    "load_volume",
    "neighbors",
    "save_volume",
    "threshold",
    "volumes_equal",
    "__version__",
]
