"""Pairwise alignment loss between same-class, non-overlapping boxes.

Two boxes form a candidate pair along an axis when they share a class,
do not overlap, and both of their edges along that axis differ by less
than a pixel threshold ``T``.  Each accepted pair contributes the sum of
its two absolute edge differences; each axis sum is divided by the
number of accepted pairs on that axis (at least one) and the two axis
terms are added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import BBox, DetectionSet, iou, pairwise_iou

__all__ = [
    "AlignConfig",
    "LossBreakdown",
    "PairCheck",
    "alignment_loss",
    "alignment_subgradient",
    "is_candidate_pair",
    "pair_loss",
    "weighted_loss",
]

AXES = ("x", "y")
# corner columns of the (x1, y1, x2, y2) layout for each axis
_EDGE_COLUMNS = {"x": (0, 2), "y": (1, 3)}


@dataclass(frozen=True)
class AlignConfig:
    """Threshold ``T`` (pixels), weight ``W`` and the IoU treated as "no overlap"."""

    T: float = 9.0
    W: float = 0.5
    eps_overlap: float = 1e-9

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"T must be positive, got {self.T}")
        if not (math.isfinite(self.W) and self.W >= 0):
            raise ValueError(f"W must be non-negative, got {self.W}")
        if not 0.0 <= self.eps_overlap < 1.0:
            raise ValueError(f"eps_overlap must lie in [0, 1), got {self.eps_overlap}")


@dataclass(frozen=True)
class LossBreakdown:
    sum_x: float = 0.0
    sum_y: float = 0.0
    n_x: int = 0
    n_y: int = 0

    @property
    def total(self) -> float:
        return self.sum_x / max(self.n_x, 1) + self.sum_y / max(self.n_y, 1)

    def as_dict(self) -> dict:
        return {
            "sum_x": self.sum_x,
            "sum_y": self.sum_y,
            "n_x": self.n_x,
            "n_y": self.n_y,
            "total": self.total,
        }


class PairCheck(NamedTuple):
    accepted: bool
    reason: str | None  # first failed condition: "class", "overlap", "edge1", "edge2"

    def __bool__(self):
        return self.accepted


def _check_axis(axis: str) -> tuple[int, int]:
    try:
        return _EDGE_COLUMNS[axis]
    except KeyError:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}") from None


def is_candidate_pair(a: BBox, b: BBox, axis: str, cfg: AlignConfig) -> PairCheck:
    """Test the four pair conditions in the fixed order class, overlap, edge1, edge2."""
    first, second = _check_axis(axis)
    ca, cb = a.as_tuple(), b.as_tuple()
    if a.class_id != b.class_id:
        return PairCheck(False, "class")
    if iou(a, b) > cfg.eps_overlap:
        return PairCheck(False, "overlap")
    if not abs(ca[first] - cb[first]) < cfg.T:
        return PairCheck(False, "edge1")
    if not abs(ca[second] - cb[second]) < cfg.T:
        return PairCheck(False, "edge2")
    return PairCheck(True, None)


def pair_loss(a: BBox, b: BBox, axis: str) -> float:
    first, second = _check_axis(axis)
    ca, cb = a.as_tuple(), b.as_tuple()
    return abs(ca[first] - cb[first]) + abs(ca[second] - cb[second])


def _pair_masks(coords: np.ndarray, classes: np.ndarray, cfg: AlignConfig):
    """Upper-triangular boolean masks of accepted x- and y-pairs."""
    n = len(coords)
    eligible = np.triu(np.ones((n, n), dtype=bool), 1)
    eligible &= classes[:, None] == classes[None, :]
    eligible &= pairwise_iou(coords) <= cfg.eps_overlap
    masks = []
    for axis in AXES:
        first, second = _EDGE_COLUMNS[axis]
        d1 = np.abs(coords[:, None, first] - coords[None, :, first])
        d2 = np.abs(coords[:, None, second] - coords[None, :, second])
        masks.append((eligible & (d1 < cfg.T) & (d2 < cfg.T), d1 + d2))
    return masks


def _loss_arrays(coords, classes, cfg: AlignConfig, with_grad: bool = False):
    coords = np.asarray(coords, dtype=float).reshape(-1, 4)
    classes = np.asarray(classes)
    sums, counts = [], []
    grad = np.zeros_like(coords) if with_grad else None
    for axis, (mask, pair_values) in zip(AXES, _pair_masks(coords, classes, cfg)):
        count = int(mask.sum())
        # fsum makes the result independent of pair visiting order
        sums.append(math.fsum(pair_values[mask].tolist()))
        counts.append(count)
        if with_grad and count:
            sym = mask | mask.T
            for col in _EDGE_COLUMNS[axis]:
                s = np.sign(coords[:, None, col] - coords[None, :, col])
                grad[:, col] = np.where(sym, s, 0.0).sum(axis=1) / count
    breakdown = LossBreakdown(sums[0], sums[1], counts[0], counts[1])
    return breakdown, grad


def alignment_loss(dets: DetectionSet, cfg: AlignConfig) -> LossBreakdown:
    """Per-axis pair sums, pair counts and the normalized total for one image.

    A pair that qualifies on both axes contributes to both sums.
    """
    if len(dets) < 2:
        return LossBreakdown()
    breakdown, _ = _loss_arrays(dets.coords, dets.class_ids, cfg)
    return breakdown


def alignment_subgradient(dets: DetectionSet, cfg: AlignConfig) -> np.ndarray:
    """Subgradient of the normalized total with respect to every box corner.

    Returns an ``(n, 4)`` array ordered like ``(x1, y1, x2, y2)``.  Pair
    acceptance is held fixed (no gradient through the conditions) and
    ``sign(0) = 0``, so a perfect grid is a stationary point.
    """
    if len(dets) < 2:
        return np.zeros((len(dets), 4))
    _, grad = _loss_arrays(dets.coords, dets.class_ids, cfg, with_grad=True)
    return grad


def weighted_loss(breakdown: LossBreakdown, cfg: AlignConfig) -> float:
    return cfg.W * breakdown.total
