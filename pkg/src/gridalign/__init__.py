"""Grid-consistency tools for facade detections.

Pairwise alignment loss and its subgradient, inference-time refinement,
SVD regularity metric, detection evaluation and synthetic facade grids.
"""

from .alignment import (
    AlignConfig,
    LossBreakdown,
    alignment_loss,
    alignment_subgradient,
    is_candidate_pair,
    pair_loss,
    weighted_loss,
)
from .estimators import GridAligner, RegularityScorer
from .evaluation import average_precision, confidence_filter, map50, match_detections, nms
from .geometry import BBox, DetectionSet, area, iou, validate_box
from .refine import RefineConfig, RefineTrace, refine_detections, refinement_objective
from .regularity import (
    MaskCanvas,
    RegularityCurve,
    rank_k_mse,
    rasterize_class_mask,
    regularity_score,
    relative_regularity,
)
from .synth import GridSpec, NoiseSpec, corrupt, generate_grid

__version__ = "0.1.0"
