"""SVD-based structural regularity of binary class masks.

A grid of identical, perfectly aligned rectangles is a rank-1 matrix.
The score sums, over ``k = 1..k_max``, the mean squared error between a
mask and its best rank-``k`` approximation; lower means more regular.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ParseError, RankOutOfRange, ZeroBaseline
from .geometry import DetectionSet

__all__ = [
    "MaskCanvas",
    "RegularityCurve",
    "rank_k_mse",
    "rasterize_class_mask",
    "read_pgm",
    "regularity_score",
    "relative_regularity",
    "write_pgm",
]

DEFAULT_CANVAS = 256
DEFAULT_K_MAX = 25


@dataclass(frozen=True, eq=False)
class MaskCanvas:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or 0 in values.shape:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {values.shape}")
        if not np.isin(values, (0, 1)).all():
            raise ValueError("mask entries must be exactly 0 or 1")
        object.__setattr__(self, "values", values.astype(np.uint8))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def transpose(self) -> "MaskCanvas":
        return MaskCanvas(self.values.T)


@dataclass(frozen=True)
class RegularityCurve:
    mse: tuple[float, ...]
    k_max: int
    truncated: bool = False  # True when k_max exceeded the mask's smaller dimension

    @property
    def score(self) -> float:
        return math.fsum(self.mse)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k", "mse"])
            for k, value in enumerate(self.mse, start=1):
                writer.writerow([k, repr(value)])


def rasterize_class_mask(
    dets: DetectionSet,
    class_id: int,
    canvas_w: int = DEFAULT_CANVAS,
    canvas_h: int = DEFAULT_CANVAS,
) -> MaskCanvas:
    """Binary mask of ``class_id`` boxes on a ``canvas_h x canvas_w`` grid.

    The set's canvas is scaled uniformly to fit the mask (aspect preserved,
    anchored top-left, remainder left as zero padding).  A pixel is set
    when its center falls in ``[x1, x2) x [y1, y2)`` of any box.
    """
    if canvas_w < 1 or canvas_h < 1:
        raise ValueError("mask canvas must be positive")
    scale = min(canvas_w / dets.canvas_w, canvas_h / dets.canvas_h)
    mask = np.zeros((canvas_h, canvas_w), dtype=np.uint8)
    for box in dets.boxes:
        if box.class_id != class_id:
            continue
        # pixel j is covered iff x1 <= j + 0.5 < x2
        c0 = max(math.ceil(box.x1 * scale - 0.5), 0)
        c1 = min(math.ceil(box.x2 * scale - 0.5), canvas_w)
        r0 = max(math.ceil(box.y1 * scale - 0.5), 0)
        r1 = min(math.ceil(box.y2 * scale - 0.5), canvas_h)
        if c1 > c0 and r1 > r0:
            mask[r0:r1, c0:c1] = 1
    return MaskCanvas(mask)


def _svd(mask: MaskCanvas):
    return np.linalg.svd(mask.values.astype(float), full_matrices=False)


def _reconstruction_mse(matrix, u, s, vt, k):
    approx = (u[:, :k] * s[:k]) @ vt[:k]
    return float(np.mean((matrix - approx) ** 2))


def rank_k_mse(mask: MaskCanvas, k: int) -> float:
    """Mean squared error (over all pixels) of the best rank-``k`` approximation."""
    limit = min(mask.width, mask.height)
    if not 1 <= k <= limit:
        raise RankOutOfRange(f"k={k} outside [1, {limit}]")
    u, s, vt = _svd(mask)
    return _reconstruction_mse(mask.values.astype(float), u, s, vt, k)


def regularity_score(mask: MaskCanvas, k_max: int = DEFAULT_K_MAX) -> RegularityCurve:
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    limit = min(mask.width, mask.height)
    k_eff = min(k_max, limit)
    matrix = mask.values.astype(float)
    if not matrix.any():
        return RegularityCurve((0.0,) * k_eff, k_eff, k_eff < k_max)
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    mse = [_reconstruction_mse(matrix, u, s, vt, k) for k in range(1, k_eff + 1)]
    return RegularityCurve(tuple(mse), k_eff, k_eff < k_max)


def relative_regularity(method_scores: Sequence[float], baseline_scores: Sequence[float]) -> float:
    """Summed method score as a percentage of the summed baseline score."""
    if len(method_scores) != len(baseline_scores) or not len(method_scores):
        raise ValueError("score sequences must be non-empty and of equal length")
    baseline = math.fsum(baseline_scores)
    if baseline <= 0:
        raise ZeroBaseline("baseline regularity sums to zero")
    # ratio first, so equal sums give exactly 100.0
    return 100.0 * (math.fsum(method_scores) / baseline)


def write_pgm(mask: MaskCanvas, path) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write((mask.values * 255).astype(np.uint8).tobytes())


def read_pgm(path) -> MaskCanvas:
    """Read a binary (P5) PGM; any non-zero pixel becomes 1."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise ParseError(f"{path}: truncated PGM header")
        tokens.append(data[pos:end])
        pos = end
    magic, width, height, maxval = tokens
    if magic != b"P5":
        raise ParseError(f"{path}: expected P5 PGM, got {magic!r}")
    width, height, maxval = int(width), int(height), int(maxval)
    if maxval > 255:
        raise ParseError(f"{path}: only 8-bit PGM is supported")
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ParseError(f"{path}: expected {width * height} pixels, found {pixels.size}")
    return MaskCanvas((pixels.reshape(height, width) > 0).astype(np.uint8))
