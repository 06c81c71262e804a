"""Axis-aligned box primitives shared by every other module.

Boxes are stored as ``(x1, y1, x2, y2)`` corners in continuous pixel
coordinates, origin at the top-left of the image.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    BoxClampedWarning,
    ConfidenceOutOfRange,
    DegenerateBox,
    InvalidBox,
    NonFinite,
)

__all__ = [
    "BBox",
    "DetectionSet",
    "area",
    "iou",
    "pairwise_iou",
    "validate_box",
]


@dataclass(frozen=True)
class BBox:
    class_id: int
    x1: float
    y1: float
    x2: float
    y2: float
    confidence: float = 1.0

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise NonFinite(f"non-finite corner in {coords}")
        if not math.isfinite(self.confidence):
            raise NonFinite(f"non-finite confidence {self.confidence}")
        if self.x1 >= self.x2 or self.y1 >= self.y2:
            raise DegenerateBox(f"box {coords} has no positive area")
        if not 0.0 <= self.confidence <= 1.0:
            raise ConfidenceOutOfRange(f"confidence {self.confidence} not in [0, 1]")
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise InvalidBox(f"class_id must be a non-negative integer, got {self.class_id!r}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def validate_box(x1, y1, x2, y2, class_id: int = 0, confidence: float = 1.0) -> BBox:
    """Build a :class:`BBox` from raw values, raising a descriptive error if invalid.

    Raises
    ------
    DegenerateBox
        ``x1 >= x2`` or ``y1 >= y2``.
    NonFinite
        Any corner or the confidence is NaN or infinite.
    ConfidenceOutOfRange
        Confidence outside ``[0, 1]``.
    """
    try:
        values = [float(v) for v in (x1, y1, x2, y2, confidence)]
    except (TypeError, ValueError) as exc:
        raise InvalidBox(f"box fields must be numeric: {exc}") from None
    x1, y1, x2, y2, confidence = values
    return BBox(int(class_id), x1, y1, x2, y2, confidence)


def area(a: BBox) -> float:
    return (a.x2 - a.x1) * (a.y2 - a.y1)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (area(a) + area(b) - inter)


def pairwise_iou(coords: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
    """IoU matrix between two ``(n, 4)`` corner arrays (``other`` defaults to ``coords``)."""
    a = np.asarray(coords, dtype=float).reshape(-1, 4)
    b = a if other is None else np.asarray(other, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


@dataclass(frozen=True)
class DetectionSet:
    """All boxes for one facade image, plus the canvas they live on."""

    image_id: str
    canvas_w: float
    canvas_h: float
    boxes: tuple[BBox, ...] = field(default_factory=tuple)
    class_names: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if not (self.canvas_w > 0 and self.canvas_h > 0):
            raise ValueError(f"canvas must be positive, got {self.canvas_w}x{self.canvas_h}")
        if not isinstance(self.boxes, tuple):
            object.__setattr__(self, "boxes", tuple(self.boxes))

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    @property
    def coords(self) -> np.ndarray:
        if not self.boxes:
            return np.zeros((0, 4))
        return np.array([b.as_tuple() for b in self.boxes], dtype=float)

    @property
    def class_ids(self) -> np.ndarray:
        return np.array([b.class_id for b in self.boxes], dtype=int)

    @property
    def confidences(self) -> np.ndarray:
        return np.array([b.confidence for b in self.boxes], dtype=float)

    def with_boxes(self, boxes: Iterable[BBox]) -> "DetectionSet":
        return replace(self, boxes=tuple(boxes))

    def with_coords(self, coords: np.ndarray) -> "DetectionSet":
        """Same boxes (class, confidence, order) with new corner coordinates."""
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (len(self.boxes), 4):
            raise ValueError(f"expected shape {(len(self.boxes), 4)}, got {coords.shape}")
        return self.with_boxes(
            replace(b, x1=float(c[0]), y1=float(c[1]), x2=float(c[2]), y2=float(c[3]))
            for b, c in zip(self.boxes, coords)
        )

    def subset(self, indices: Sequence[int]) -> "DetectionSet":
        return self.with_boxes(self.boxes[i] for i in indices)

    def clamped(self) -> "DetectionSet":
        """Clamp every box to the canvas, warning once per clamped box.

        A box that loses all its area to clamping is degenerate and raises.
        """
        out = []
        for i, b in enumerate(self.boxes):
            x1, x2 = min(max(b.x1, 0.0), self.canvas_w), min(max(b.x2, 0.0), self.canvas_w)
            y1, y2 = min(max(b.y1, 0.0), self.canvas_h), min(max(b.y2, 0.0), self.canvas_h)
            if (x1, y1, x2, y2) != b.as_tuple():
                warnings.warn(
                    f"{self.image_id}: box {i} {b.as_tuple()} clamped to canvas "
                    f"{self.canvas_w}x{self.canvas_h}",
                    BoxClampedWarning,
                    stacklevel=2,
                )
                b = validate_box(x1, y1, x2, y2, b.class_id, b.confidence)
            out.append(b)
        return self.with_boxes(out)
