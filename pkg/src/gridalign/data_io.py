"""Reading and writing detections, CMP annotations, facade crops and splits.

Interchange format
------------------
One JSON object per line; blank lines and lines starting with ``#`` are
ignored.  A line with ``image_id``, ``canvas_w`` and ``canvas_h`` but no
``class_id`` declares an image (so images without boxes survive a round
trip).  Every other line is one box::

    {"image_id": "a", "class_id": 3, "class_name": "window",
     "x1": 10.0, "y1": 5.0, "x2": 30.0, "y2": 40.0, "confidence": 0.9}

``class_name`` is optional.  A box whose image was never declared gets a
canvas just large enough to hold every box of that image.
"""

from __future__ import annotations

import json
import math
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .exceptions import (
    BadRatios,
    BoxClippedWarning,
    EmptyCrop,
    InvalidBox,
    ParseError,
    UnknownLabel,
)
from .geometry import BBox, DetectionSet, validate_box

__all__ = [
    "CMP_LABELS",
    "CmpLayout",
    "DatasetSplit",
    "FacadeSample",
    "crop_to_facade",
    "load_detections",
    "parse_cmp_annotation",
    "parse_detections",
    "read_label_table",
    "save_detections",
    "split_dataset",
    "write_detections",
]

_BOX_FIELDS = ("x1", "y1", "x2", "y2")

# label ids shipped with the CMP facade database
CMP_LABELS = {
    1: "background",
    2: "facade",
    3: "window",
    4: "door",
    5: "cornice",
    6: "sill",
    7: "balcony",
    8: "blind",
    9: "deco",
    10: "molding",
    11: "pillar",
    12: "shop",
}


def _iter_lines(source) -> Iterable[str]:
    if isinstance(source, str):
        return source.splitlines()
    return source


def parse_detections(source: str | TextIO | Iterable[str], clamp: bool = True) -> dict[str, DetectionSet]:
    """Parse interchange records into one :class:`DetectionSet` per image id.

    Boxes outside their canvas are clamped with a ``BoxClampedWarning``
    when ``clamp`` is true.
    """
    canvases: dict[str, tuple[float, float]] = {}
    boxes: dict[str, list[BBox]] = {}
    names: dict[str, dict[int, str]] = {}
    for lineno, line in enumerate(_iter_lines(source), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed record: {exc.msg}", lineno) from None
        if not isinstance(record, dict) or not record.get("image_id"):
            raise ParseError("record needs a non-empty image_id", lineno)
        image_id = str(record["image_id"])
        boxes.setdefault(image_id, [])
        if "class_id" not in record:
            try:
                canvases[image_id] = (float(record["canvas_w"]), float(record["canvas_h"]))
            except (KeyError, TypeError, ValueError):
                raise ParseError("image record needs numeric canvas_w and canvas_h", lineno) from None
            continue
        try:
            values = [record[k] for k in _BOX_FIELDS]
            box = validate_box(*values, class_id=record["class_id"], confidence=record.get("confidence", 1.0))
        except KeyError as exc:
            raise ParseError(f"box record missing field {exc}", lineno) from None
        except InvalidBox as exc:
            raise type(exc)(f"line {lineno} ({image_id}): {exc}") from None
        boxes[image_id].append(box)
        if record.get("class_name"):
            names.setdefault(image_id, {})[box.class_id] = record["class_name"]

    sets = {}
    for image_id, items in boxes.items():
        if image_id in canvases:
            w, h = canvases[image_id]
        else:
            w = max((b.x2 for b in items), default=1.0)
            h = max((b.y2 for b in items), default=1.0)
            w, h = float(math.ceil(w)), float(math.ceil(h))
        dets = DetectionSet(image_id, w, h, tuple(items), names.get(image_id, {}))
        sets[image_id] = dets.clamped() if clamp else dets
    return sets


def write_detections(sets: Iterable[DetectionSet] | Mapping[str, DetectionSet], class_names: Mapping[int, str] | None = None) -> str:
    """Serialize sets to interchange text; coordinates use shortest round-trip repr."""
    if isinstance(sets, Mapping):
        sets = sets.values()
    lines = []
    for dets in sets:
        lines.append(json.dumps({"image_id": dets.image_id, "canvas_w": dets.canvas_w, "canvas_h": dets.canvas_h}))
        names = {**dets.class_names, **(class_names or {})}
        for b in dets.boxes:
            record = {"image_id": dets.image_id, "class_id": b.class_id}
            if b.class_id in names:
                record["class_name"] = names[b.class_id]
            record.update(x1=b.x1, y1=b.y1, x2=b.x2, y2=b.y2, confidence=b.confidence)
            lines.append(json.dumps(record))
    return "".join(line + "\n" for line in lines)


def load_detections(path, clamp: bool = True) -> dict[str, DetectionSet]:
    with open(path) as fh:
        return parse_detections(fh, clamp=clamp)


def save_detections(sets, path, class_names=None) -> None:
    Path(path).write_text(write_detections(sets, class_names))


def read_label_table(path) -> dict[int, str]:
    """``id = name`` (or ``id: name``) per line; ``#`` starts a comment."""
    table = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        for sep in ("=", ":"):
            if sep in text:
                key, value = text.split(sep, 1)
                break
        else:
            raise ParseError(f"{path}: expected 'id = name'", lineno)
        try:
            table[int(key.strip())] = value.strip()
        except ValueError:
            raise ParseError(f"{path}: label id {key.strip()!r} is not an integer", lineno) from None
    return table


@dataclass(frozen=True)
class CmpLayout:
    """Element names of a CMP annotation document.

    Each ``object`` holds a ``points`` element with two ``x`` and two ``y``
    children (relative coordinates in ``[0, 1]``) and an integer ``label``.
    """

    object_tag: str = "object"
    points_tag: str = "points"
    x_tag: str = "x"
    y_tag: str = "y"
    label_tag: str = "label"


def parse_cmp_annotation(
    document: str,
    image_w: float,
    image_h: float,
    image_id: str = "image",
    labels: Mapping[int, str] | None = CMP_LABELS,
    layout: CmpLayout = CmpLayout(),
) -> DetectionSet:
    """Scale one CMP annotation document to pixel boxes with confidence 1.0.

    Raises ``UnknownLabel`` for a label id missing from ``labels`` (pass
    ``labels=None`` to accept any id).
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise ParseError(f"{image_id}: {exc}", exc.position[0]) from None
    objects = [root] if root.tag == layout.object_tag else root.iter(layout.object_tag)
    boxes = []
    for n, obj in enumerate(objects):
        points = obj.find(layout.points_tag)
        label = obj.find(layout.label_tag)
        if points is None or label is None:
            raise ParseError(f"{image_id}: object {n} lacks <{layout.points_tag}> or <{layout.label_tag}>")
        try:
            xs = [float(e.text) for e in points.findall(layout.x_tag)]
            ys = [float(e.text) for e in points.findall(layout.y_tag)]
            label_id = int(label.text)
        except (TypeError, ValueError):
            raise ParseError(f"{image_id}: object {n} has non-numeric fields") from None
        if len(xs) != 2 or len(ys) != 2:
            raise ParseError(f"{image_id}: object {n} needs exactly two x and two y values")
        if labels is not None and label_id not in labels:
            raise UnknownLabel(f"{image_id}: object {n} has unmapped label {label_id}")
        boxes.append(
            validate_box(min(xs) * image_w, min(ys) * image_h, max(xs) * image_w, max(ys) * image_h, label_id, 1.0)
        )
    names = {b.class_id: labels[b.class_id] for b in boxes} if labels is not None else {}
    return DetectionSet(image_id, float(image_w), float(image_h), tuple(boxes), names).clamped()


@dataclass
class FacadeSample:
    sample_id: str
    source_image_id: str
    crop: tuple[float, float, float, float]
    annotations: DetectionSet
    class_names: dict = field(default_factory=dict)
    clipped: list = field(default_factory=list)  # indices (in annotations) of clipped boxes


def crop_to_facade(
    annotations: DetectionSet,
    crop: Sequence[float],
    sample_id: str | None = None,
    class_names: Mapping[int, str] | None = None,
) -> FacadeSample:
    """Translate boxes into the ``(x1, y1, x2, y2)`` crop frame.

    Boxes with no area inside the crop are dropped; boxes straddling its
    boundary are clipped and listed in ``FacadeSample.clipped``.
    """
    cx1, cy1, cx2, cy2 = (float(v) for v in crop)
    if cx2 <= cx1 or cy2 <= cy1:
        raise EmptyCrop(f"crop {tuple(crop)} has no area")
    if cx1 < 0 or cy1 < 0 or cx2 > annotations.canvas_w or cy2 > annotations.canvas_h:
        raise ValueError(f"crop {tuple(crop)} exceeds the source canvas")
    sample_id = sample_id or f"{annotations.image_id}_{int(cx1)}_{int(cy1)}"
    kept, clipped = [], []
    for b in annotations.boxes:
        x1, y1 = max(b.x1, cx1), max(b.y1, cy1)
        x2, y2 = min(b.x2, cx2), min(b.y2, cy2)
        if x2 <= x1 or y2 <= y1:
            continue
        if (x1, y1, x2, y2) != b.as_tuple():
            clipped.append(len(kept))
        kept.append(BBox(b.class_id, x1 - cx1, y1 - cy1, x2 - cx1, y2 - cy1, b.confidence))
    if clipped:
        warnings.warn(f"{sample_id}: {len(clipped)} boxes clipped to the crop", BoxClippedWarning, stacklevel=2)
    names = dict(class_names or annotations.class_names)
    dets = DetectionSet(sample_id, cx2 - cx1, cy2 - cy1, tuple(kept), names)
    return FacadeSample(sample_id, annotations.image_id, (cx1, cy1, cx2, cy2), dets, names, clipped)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    val: tuple
    test: tuple
    seed: int
    ratios: tuple

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def split_dataset(sample_ids: Sequence[str], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Seeded train/val/test split.

    ids are sorted, then permuted with ``numpy.random.default_rng(seed)``.
    Train and val get ``floor(n * ratio)`` ids each and test takes the
    remainder, so 689 ids split as (551, 68, 70).  If flooring would leave
    train empty while its ratio is positive, train takes one id first.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = sorted(sample_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    n = len(ids)
    n_train = math.floor(n * ratios[0])
    if n_train == 0 and n > 0 and ratios[0] > 0:
        n_train = 1
    n_val = min(math.floor(n * ratios[1]), n - n_train)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train : n_train + n_val]),
        tuple(shuffled[n_train + n_val :]),
        seed,
        ratios,
    )
