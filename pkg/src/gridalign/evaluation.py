"""Detection post-processing and accuracy: confidence filter, NMS, mAP@0.5."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ImageIdMismatch, NoGroundTruth
from .geometry import DetectionSet, pairwise_iou

__all__ = [
    "DEFAULT_CONF",
    "DEFAULT_NMS_IOU",
    "EvalReport",
    "MatchReport",
    "average_precision",
    "confidence_filter",
    "map50",
    "match_detections",
    "nms",
]

DEFAULT_CONF = 0.25
DEFAULT_NMS_IOU = 0.7


def confidence_filter(dets: DetectionSet, threshold: float = DEFAULT_CONF) -> DetectionSet:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return dets.with_boxes(b for b in dets.boxes if b.confidence >= threshold)


def _confidence_order(dets: DetectionSet) -> np.ndarray:
    # stable sort keeps ingestion order among equal confidences
    return np.argsort(-dets.confidences, kind="stable")


def nms(dets: DetectionSet, iou_threshold: float = DEFAULT_NMS_IOU) -> DetectionSet:
    """Per-class greedy non-maximum suppression; output sorted by descending confidence."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    if not len(dets):
        return dets
    order = _confidence_order(dets)
    overlaps = pairwise_iou(dets.coords)
    classes = dets.class_ids
    suppressed = np.zeros(len(dets), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= (classes == classes[i]) & (overlaps[i] > iou_threshold)
    return dets.subset(keep)


@dataclass
class MatchReport:
    """Greedy matching result for one image.

    Predictions are listed in descending confidence order.
    ``gt_matched[g]`` is the prediction index (into the sorted list) that
    claimed ground truth ``g``, or ``None``.
    """

    image_id: str
    pred_classes: list = field(default_factory=list)
    pred_confidences: list = field(default_factory=list)
    pred_tp: list = field(default_factory=list)
    gt_classes: list = field(default_factory=list)
    gt_matched: list = field(default_factory=list)
    iou_threshold: float = 0.5

    @property
    def tp(self) -> int:
        return sum(self.pred_tp)

    @property
    def fp(self) -> int:
        return len(self.pred_tp) - self.tp

    @property
    def fn(self) -> int:
        return sum(m is None for m in self.gt_matched)


def match_detections(preds: DetectionSet, gt: DetectionSet, iou_threshold: float = 0.5) -> MatchReport:
    """Greedy matching in descending confidence order.

    Each prediction takes the unmatched same-class ground truth with the
    highest IoU (first in ground-truth order on ties) if that IoU reaches
    ``iou_threshold``.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    order = _confidence_order(preds)
    report = MatchReport(
        image_id=gt.image_id,
        gt_classes=gt.class_ids.tolist(),
        gt_matched=[None] * len(gt),
        iou_threshold=iou_threshold,
    )
    overlaps = pairwise_iou(preds.coords, gt.coords) if len(preds) and len(gt) else None
    gt_classes = gt.class_ids
    for rank, p in enumerate(order):
        box = preds.boxes[p]
        report.pred_classes.append(box.class_id)
        report.pred_confidences.append(box.confidence)
        hit = False
        if overlaps is not None:
            free = (gt_classes == box.class_id) & np.array([m is None for m in report.gt_matched])
            candidates = np.where(free, overlaps[p], -1.0)
            g = int(np.argmax(candidates))  # argmax returns the first maximum
            if free[g] and candidates[g] >= iou_threshold:
                report.gt_matched[g] = rank
                hit = True
        report.pred_tp.append(hit)
    return report


def _class_entries(reports: Iterable[MatchReport], class_id):
    confidences, flags, n_gt = [], [], 0
    for report in reports:
        for c, conf, tp in zip(report.pred_classes, report.pred_confidences, report.pred_tp):
            if class_id is None or c == class_id:
                confidences.append(conf)
                flags.append(tp)
        n_gt += sum(1 for c in report.gt_classes if class_id is None or c == class_id)
    return np.asarray(confidences, dtype=float), np.asarray(flags, dtype=bool), n_gt


def average_precision(reports: Sequence[MatchReport], class_id: int | None = None) -> float:
    """All-points interpolated AP over predictions pooled across images.

    With ``class_id=None`` every entry of ``reports`` is taken to belong to
    one class.  Predictions sharing a confidence enter the PR curve as one
    block, so the result depends only on the confidence ordering.
    """
    confidences, flags, n_gt = _class_entries(reports, class_id)
    if n_gt == 0:
        raise NoGroundTruth(f"class {class_id} has no ground-truth instances")
    if not len(confidences):
        return 0.0
    order = np.argsort(-confidences, kind="stable")
    confidences, flags = confidences[order], flags[order]
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    # last index of every block of equal confidence
    ends = np.flatnonzero(np.append(confidences[1:] != confidences[:-1], True))
    recall = tp[ends] / n_gt
    precision = tp[ends] / (tp[ends] + fp[ends])

    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[0.0], precision])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


@dataclass
class EvalReport:
    ap: dict = field(default_factory=dict)
    tp: dict = field(default_factory=dict)
    fp: dict = field(default_factory=dict)
    fn: dict = field(default_factory=dict)
    unmatched_classes: list = field(default_factory=list)  # predicted but absent from ground truth
    iou_threshold: float = 0.5

    @property
    def map(self) -> float:
        return float(np.mean(list(self.ap.values()))) if self.ap else 0.0

    def summary(self) -> str:
        return (
            f"mAP@{self.iou_threshold:g}={self.map:.6f} classes={len(self.ap)} "
            f"TP={sum(self.tp.values())} FP={sum(self.fp.values())} FN={sum(self.fn.values())}"
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "AP", "TP", "FP", "FN"])
        for c in sorted(self.ap):
            writer.writerow([c, repr(self.ap[c]), self.tp[c], self.fp[c], self.fn[c]])
        for c in self.unmatched_classes:
            writer.writerow([c, "", self.tp.get(c, 0), self.fp.get(c, 0), 0])
        return buf.getvalue()


def map50(
    preds: Mapping[str, DetectionSet],
    gts: Mapping[str, DetectionSet],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """mAP over classes that have ground truth; both mappings are keyed by image id."""
    if set(preds) != set(gts):
        missing = sorted(set(preds) ^ set(gts))
        raise ImageIdMismatch(f"image ids differ between predictions and ground truth: {missing}")
    reports = [match_detections(preds[i], gts[i], iou_threshold) for i in sorted(gts)]
    gt_classes = sorted({c for r in reports for c in r.gt_classes})
    pred_classes = sorted({c for r in reports for c in r.pred_classes})
    out = EvalReport(iou_threshold=iou_threshold)
    out.unmatched_classes = [c for c in pred_classes if c not in gt_classes]
    for c in gt_classes + out.unmatched_classes:
        _, flags, n_gt = _class_entries(reports, c)
        out.tp[c] = int(flags.sum())
        out.fp[c] = int((~flags).sum())
        if n_gt:
            out.fn[c] = n_gt - out.tp[c]
            out.ap[c] = average_precision(reports, c)
    return out
