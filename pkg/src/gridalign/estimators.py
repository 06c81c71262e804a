"""scikit-learn compatible wrappers around refinement and the regularity metric.

``X`` is a collection of detection sets: a single :class:`DetectionSet`,
a mapping of image id to set, any iterable of sets, or an ``(n, 5)`` /
``(n, 6)`` array of ``class, x1, y1, x2, y2[, confidence]`` rows for one
image.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .alignment import AlignConfig, alignment_loss
from .geometry import DetectionSet, validate_box
from .refine import RefineConfig, refine_detections
from .regularity import DEFAULT_CANVAS, DEFAULT_K_MAX, rasterize_class_mask, regularity_score

__all__ = ["GridAligner", "RegularityScorer", "as_detection_set", "check_detection_sets"]


def as_detection_set(rows, image_id: str = "image", canvas=None) -> DetectionSet:
    """Build one set from ``class, x1, y1, x2, y2[, confidence]`` rows.

    Without ``canvas`` the canvas is the smallest one holding every box.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] not in (5, 6):
        raise ValueError(f"expected an (n, 5) or (n, 6) array, got shape {rows.shape}")
    conf = rows[:, 5] if rows.shape[1] == 6 else np.ones(len(rows))
    boxes = [validate_box(r[1], r[2], r[3], r[4], int(r[0]), c) for r, c in zip(rows, conf)]
    if canvas is None:
        canvas = (max((b.x2 for b in boxes), default=1.0), max((b.y2 for b in boxes), default=1.0))
    return DetectionSet(image_id, float(canvas[0]), float(canvas[1]), tuple(boxes))


def check_detection_sets(X) -> list[DetectionSet]:
    if isinstance(X, DetectionSet):
        return [X]
    if isinstance(X, Mapping):
        X = list(X.values())
    elif isinstance(X, np.ndarray):
        return [as_detection_set(X)]
    else:
        X = list(X)
    bad = [type(x).__name__ for x in X if not isinstance(x, DetectionSet)]
    if bad:
        raise TypeError(f"expected DetectionSet items, got {bad[0]}")
    return X


def _unwrap_like(X, out):
    return out[0] if isinstance(X, (DetectionSet, np.ndarray)) else out


class GridAligner(TransformerMixin, BaseEstimator):
    """Snap detections toward a common row/column grid.

    ``fit`` only validates hyper-parameters; every image is refined
    independently in ``transform``, anchored to its own input boxes.

    Parameters
    ----------
    T : float
        Pixel threshold below which both edge differences must fall.
    W : float
        Weight of the alignment term (``W=0`` returns the input unchanged).
    eps_overlap : float
        Largest IoU still treated as "not overlapping".
    lambda_fid, step_size, max_iters, tol
        See :class:`gridalign.refine.RefineConfig`.
    """

    def __init__(self, T=9.0, W=0.5, eps_overlap=1e-9, lambda_fid=0.1, step_size=0.5, max_iters=500, tol=1e-3):
        self.T = T
        self.W = W
        self.eps_overlap = eps_overlap
        self.lambda_fid = lambda_fid
        self.step_size = step_size
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X=None, y=None):
        self.config_ = RefineConfig(
            AlignConfig(self.T, self.W, self.eps_overlap),
            lambda_fid=self.lambda_fid,
            step_size=self.step_size,
            max_iters=self.max_iters,
            tol=self.tol,
        )
        if X is not None:
            check_detection_sets(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        refined, traces = [], []
        for dets in check_detection_sets(X):
            out, trace = refine_detections(dets, self.config_)
            refined.append(out)
            traces.append(trace)
        self.traces_ = traces
        return _unwrap_like(X, refined)

    def loss(self, X) -> np.ndarray:
        """Alignment total of every image in ``X`` under this configuration."""
        cfg = AlignConfig(self.T, self.W, self.eps_overlap)
        return np.array([alignment_loss(d, cfg).total for d in check_detection_sets(X)])

    def score(self, X, y=None) -> float:
        return -float(np.mean(self.loss(X))) if len(check_detection_sets(X)) else 0.0


class RegularityScorer(TransformerMixin, BaseEstimator):
    """Map each image to its SVD regularity score for one class (lower is more regular)."""

    def __init__(self, class_id=0, canvas_w=DEFAULT_CANVAS, canvas_h=DEFAULT_CANVAS, k_max=DEFAULT_K_MAX):
        self.class_id = class_id
        self.canvas_w = canvas_w
        self.canvas_h = canvas_h
        self.k_max = k_max

    def fit(self, X=None, y=None):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        self.fitted_ = True
        return self

    def curves(self, X):
        return [
            regularity_score(rasterize_class_mask(d, self.class_id, self.canvas_w, self.canvas_h), self.k_max)
            for d in check_detection_sets(X)
        ]

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "fitted_")
        return np.array([c.score for c in self.curves(X)]).reshape(-1, 1)
