"""Inference-time refinement of detections under the alignment objective.

The objective is an L1 anchor to the original detections (normalized by
box count) plus ``W`` times the alignment total.  It is piecewise linear,
so the optimizer is a projected subgradient descent that only accepts
steps which lower the objective and halves its step otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .alignment import AlignConfig, _loss_arrays
from .exceptions import SetMismatch
from .geometry import DetectionSet

__all__ = [
    "MIN_EXTENT",
    "RefineConfig",
    "RefineTrace",
    "project_coords",
    "refine_detections",
    "refinement_objective",
]

MIN_EXTENT = 0.5


@dataclass(frozen=True)
class RefineConfig:
    align: AlignConfig = field(default_factory=AlignConfig)
    lambda_fid: float = 0.1
    step_size: float = 0.5
    max_iters: int = 500
    tol: float = 1e-3

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol >= 0:
            raise ValueError(f"tol must be non-negative, got {self.tol}")
        if not self.lambda_fid >= 0:
            raise ValueError(f"lambda_fid must be non-negative, got {self.lambda_fid}")


@dataclass
class RefineTrace:
    objective: list[float] = field(default_factory=list)
    alignment: list[float] = field(default_factory=list)
    max_update: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_iters(self) -> int:
        return len(self.objective)

    def record(self, objective, alignment, max_update):
        self.objective.append(float(objective))
        self.alignment.append(float(alignment))
        self.max_update.append(float(max_update))

    def rows(self):
        for i, row in enumerate(zip(self.objective, self.alignment, self.max_update), start=1):
            yield (i, *row)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "objective", "alignment", "max_update"])
            for i, obj, align, upd in self.rows():
                writer.writerow([i, repr(obj), repr(align), repr(upd)])


def _check_compatible(current: DetectionSet, anchors: DetectionSet):
    if len(current) != len(anchors):
        raise SetMismatch(f"box counts differ: {len(current)} vs {len(anchors)}")
    if not np.array_equal(current.class_ids, anchors.class_ids):
        raise SetMismatch("class ids differ or boxes are ordered differently")


def _objective(coords, anchors, classes, cfg: RefineConfig):
    n = len(coords)
    fidelity = math.fsum(np.abs(coords - anchors).ravel().tolist()) / max(n, 1)
    breakdown, _ = _loss_arrays(coords, classes, cfg.align)
    total = breakdown.total
    return cfg.lambda_fid * fidelity + cfg.align.W * total, total


def _subgradient(coords, anchors, classes, cfg: RefineConfig):
    n = len(coords)
    _, grad = _loss_arrays(coords, classes, cfg.align, with_grad=True)
    return cfg.lambda_fid * np.sign(coords - anchors) / max(n, 1) + cfg.align.W * grad


def refinement_objective(current: DetectionSet, anchors: DetectionSet, cfg: RefineConfig) -> float:
    _check_compatible(current, anchors)
    value, _ = _objective(current.coords, anchors.coords, current.class_ids, cfg)
    return value


def project_coords(coords: np.ndarray, canvas_w: float, canvas_h: float) -> np.ndarray:
    """Clamp corners to the canvas and restore a minimum extent of ``MIN_EXTENT`` px."""
    out = np.array(coords, dtype=float, copy=True)
    for lo, hi, limit in ((0, 2, canvas_w), (1, 3, canvas_h)):
        out[:, lo] = np.clip(out[:, lo], 0.0, limit)
        out[:, hi] = np.clip(out[:, hi], 0.0, limit)
        thin = out[:, hi] - out[:, lo] < MIN_EXTENT
        if thin.any():
            center = 0.5 * (out[thin, lo] + out[thin, hi])
            center = np.clip(center, MIN_EXTENT / 2, limit - MIN_EXTENT / 2)
            out[thin, lo] = center - MIN_EXTENT / 2
            out[thin, hi] = center + MIN_EXTENT / 2
    return out


def refine_detections(dets: DetectionSet, cfg: RefineConfig | None = None):
    """Refine box coordinates, anchored to ``dets``.

    Returns ``(refined, trace)``; an empty set comes back unchanged with an
    empty trace.  Classes, confidences, count and order are preserved.

    Every coordinate keeps its own step in pixels and moves against the
    sign of its subgradient.  A step is halved when that coordinate's sign
    flips and regrows by 1.2x (up to ``step_size``) while the sign holds.
    A candidate that does not lower the objective is rejected and the
    steps of all moving coordinates are halved.  Pair conditions are
    re-evaluated on every call of the objective.
    """
    cfg = cfg or RefineConfig()
    trace = RefineTrace()
    if len(dets) < 1:
        return dets, trace

    anchors = dets.coords
    classes = dets.class_ids
    current = anchors.copy()
    obj, align_total = _objective(current, anchors, classes, cfg)
    steps = np.full_like(current, cfg.step_size)
    prev_sign = np.zeros_like(current)
    for _ in range(cfg.max_iters):
        sign = np.sign(_subgradient(current, anchors, classes, cfg))
        moving = sign != 0
        if not moving.any():
            trace.record(obj, align_total, 0.0)
            trace.converged = True
            break
        # coordinates whose direction flipped overshot a kink
        flipped = sign * prev_sign < 0
        steps[flipped] *= 0.5
        candidate = project_coords(current - steps * sign, dets.canvas_w, dets.canvas_h)
        update = np.abs(candidate - current).max()
        if update < cfg.tol:
            trace.record(obj, align_total, 0.0)
            trace.converged = True
            break
        cand_obj, cand_align = _objective(candidate, anchors, classes, cfg)
        if cand_obj < obj:
            current, obj, align_total = candidate, cand_obj, cand_align
            steady = (sign * prev_sign > 0)
            steps[steady] = np.minimum(steps[steady] * 1.2, cfg.step_size)
            prev_sign = sign
            trace.record(obj, align_total, update)
        else:
            steps[moving] *= 0.5
            prev_sign = np.zeros_like(current)
            trace.record(obj, align_total, 0.0)

    if np.array_equal(current, anchors):
        return dets, trace
    return dets.with_coords(current), trace
