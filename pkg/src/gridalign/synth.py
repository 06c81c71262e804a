"""Synthetic facades: perfect window lattices and seeded corruptions of them."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import SpecOverflow
from .geometry import BBox, DetectionSet
from .refine import MIN_EXTENT

__all__ = ["CorruptionRecord", "GridSpec", "NoiseSpec", "corrupt", "generate_grid", "row_indices"]

MAX_CANVAS = 16384


@dataclass(frozen=True)
class GridSpec:
    rows: int = 5
    cols: int = 8
    width: float = 20.0
    height: float = 30.0
    h_spacing: float = 15.0
    v_spacing: float = 15.0
    margin: float = 20.0
    class_id: int = 0
    image_id: str = "synthetic"
    max_canvas: float = MAX_CANVAS

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("window width and height must be positive")
        if self.h_spacing <= 0 or self.v_spacing <= 0:
            raise ValueError("spacing must be positive so windows stay disjoint")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

    @property
    def canvas_w(self) -> float:
        return 2 * self.margin + self.cols * self.width + (self.cols - 1) * self.h_spacing

    @property
    def canvas_h(self) -> float:
        return 2 * self.margin + self.rows * self.height + (self.rows - 1) * self.v_spacing

    def column_lines(self) -> np.ndarray:
        """``(cols, 2)`` array of the true ``(x1, x2)`` of every column."""
        x1 = self.margin + np.arange(self.cols) * (self.width + self.h_spacing)
        return np.stack([x1, x1 + self.width], axis=1)

    def row_lines(self) -> np.ndarray:
        y1 = self.margin + np.arange(self.rows) * (self.height + self.v_spacing)
        return np.stack([y1, y1 + self.height], axis=1)


@dataclass(frozen=True)
class NoiseSpec:
    jitter: float = 0.0
    shear: float = 0.0
    dropout: float = 0.0
    size_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.jitter, self.size_noise) < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError(f"dropout must lie in [0, 1], got {self.dropout}")


@dataclass
class CorruptionRecord:
    """Which input box became which output box, plus the offsets applied.

    ``mapping[i]`` is the output index of input box ``i`` or ``None`` when dropped.
    ``offsets[i]`` is the ``(dx1, dy1, dx2, dy2)`` actually applied to box ``i``.
    """

    mapping: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    offsets: list = field(default_factory=list)
    row_index: list = field(default_factory=list)
    noise: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def generate_grid(spec: GridSpec) -> DetectionSet:
    if max(spec.canvas_w, spec.canvas_h) > spec.max_canvas:
        raise SpecOverflow(
            f"derived canvas {spec.canvas_w}x{spec.canvas_h} exceeds {spec.max_canvas}"
        )
    boxes = [
        BBox(spec.class_id, float(x1), float(y1), float(x2), float(y2), 1.0)
        for y1, y2 in spec.row_lines()
        for x1, x2 in spec.column_lines()
    ]
    return DetectionSet(spec.image_id, spec.canvas_w, spec.canvas_h, tuple(boxes))


def row_indices(dets: DetectionSet) -> np.ndarray:
    """Dense rank of each box's vertical center (row 0 at the top)."""
    if not len(dets):
        return np.zeros(0, dtype=int)
    coords = dets.coords
    centers = np.round(0.5 * (coords[:, 1] + coords[:, 3]), 6)
    _, ranks = np.unique(centers, return_inverse=True)
    return ranks.ravel()


def corrupt(dets: DetectionSet, noise: NoiseSpec):
    """Apply shear, size noise, per-edge jitter and dropout; return ``(corrupted, record)``.

    Every box consumes the same seven random draws regardless of which
    corruptions are enabled, so outputs for a given seed line up across
    noise settings.  Corrupted boxes are kept inside the canvas and at
    least ``MIN_EXTENT`` px wide and tall.
    """
    rng = np.random.default_rng(noise.seed)
    n = len(dets)
    jitter = rng.uniform(-1.0, 1.0, size=(n, 4))
    size = rng.uniform(-1.0, 1.0, size=(n, 2))
    keep_draw = rng.uniform(0.0, 1.0, size=n)
    rows = row_indices(dets)

    coords = dets.coords
    out = coords.copy()
    if n:
        out[:, [0, 2]] += noise.shear * rows[:, None]
        # width/height change split evenly between the two edges
        out[:, 0] -= 0.5 * noise.size_noise * size[:, 0]
        out[:, 2] += 0.5 * noise.size_noise * size[:, 0]
        out[:, 1] -= 0.5 * noise.size_noise * size[:, 1]
        out[:, 3] += 0.5 * noise.size_noise * size[:, 1]
        out += noise.jitter * jitter
        out = _restore_extent(out, dets.canvas_w, dets.canvas_h)

    record = CorruptionRecord(noise=asdict(noise), row_index=rows.tolist())
    boxes = []
    for i, box in enumerate(dets.boxes):
        # keep_draw < dropout drops; dropout 0 keeps everything, 1 drops everything
        if keep_draw[i] < noise.dropout or noise.dropout >= 1.0:
            record.mapping.append(None)
            record.dropped.append(i)
            record.offsets.append([0.0, 0.0, 0.0, 0.0])
            continue
        record.mapping.append(len(boxes))
        record.offsets.append((out[i] - coords[i]).tolist())
        x1, y1, x2, y2 = (float(v) for v in out[i])
        boxes.append(BBox(box.class_id, x1, y1, x2, y2, box.confidence))
    return dets.with_boxes(boxes), record


def _restore_extent(coords, canvas_w, canvas_h):
    out = coords.copy()
    for lo, hi, limit in ((0, 2, canvas_w), (1, 3, canvas_h)):
        out[:, lo] = np.clip(out[:, lo], 0.0, limit - MIN_EXTENT)
        out[:, hi] = np.clip(out[:, hi], out[:, lo] + MIN_EXTENT, limit)
    return out
