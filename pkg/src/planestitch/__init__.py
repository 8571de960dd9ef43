"""Two-image stitching by planar region consensus.

The library matches planar regions between an image pair with regional
RANSAC, densifies correspondences per dominant region, estimates a
per-vertex similarity field, solves a sparse quadratic mesh energy, and
composites the mosaic. A separate metrics module scores clustering-style
segmentation masks through a permuted ground truth.
"""

from .errors import (
    AssemblyError,
    ConsensusError,
    EstimationError,
    InputError,
    MetricError,
    SolverError,
    StitchError,
)
from .segmetrics import confusion_matrix, max_weight_matching, permute_mask, permuted_scores

__version__ = "0.1.0"
