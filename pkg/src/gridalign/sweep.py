"""W x T sweep: refine a dataset per cell, score regularity and mAP, write CSV and SVG."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .alignment import AlignConfig, alignment_loss
from .evaluation import DEFAULT_CONF, confidence_filter, map50
from .exceptions import ConfigInvalid, InputMissing, ZeroBaseline
from .geometry import DetectionSet
from .refine import RefineConfig, refine_detections
from .regularity import DEFAULT_CANVAS, DEFAULT_K_MAX, rasterize_class_mask, regularity_score, relative_regularity
from .synth import GridSpec, NoiseSpec, corrupt, generate_grid

__all__ = ["SweepConfig", "SweepRow", "make_synthetic_dataset", "run_sweep", "write_svg_scatter"]

log = logging.getLogger(__name__)

CSV_COLUMNS = ["W", "T", "relative_svd", "map50", "align_before", "align_after", "n_images", "errors"]


@dataclass(frozen=True)
class SweepConfig:
    W_values: tuple = (0.0, 0.1, 0.5, 1.0)
    T_values: tuple = (9.0,)
    refine: RefineConfig = field(default_factory=RefineConfig)
    class_id: int = 0
    canvas: tuple = (DEFAULT_CANVAS, DEFAULT_CANVAS)
    k_max: int = DEFAULT_K_MAX
    conf: float = DEFAULT_CONF
    out_dir: Path | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.W_values or not self.T_values:
            raise ConfigInvalid("W and T value lists must be non-empty")
        if min(self.W_values) < 0 or min(self.T_values) <= 0:
            raise ConfigInvalid("W values must be >= 0 and T values > 0")
        W = tuple(sorted({float(w) for w in self.W_values} | {0.0}))
        object.__setattr__(self, "W_values", W)
        object.__setattr__(self, "T_values", tuple(sorted({float(t) for t in self.T_values})))


@dataclass
class SweepRow:
    W: float
    T: float
    relative_svd: float
    map50: float
    align_before: float
    align_after: float
    n_images: int
    seconds: float = 0.0
    errors: str = ""

    def csv_fields(self):
        def fmt(v):
            return "nan" if isinstance(v, float) and math.isnan(v) else repr(v)

        return [fmt(self.W), fmt(self.T), fmt(self.relative_svd), fmt(self.map50),
                fmt(self.align_before), fmt(self.align_after), self.n_images, self.errors]


def make_synthetic_dataset(grid: GridSpec, noise: NoiseSpec, n_images: int, seed: int = 0, records=None):
    """``(detections, ground_truth)`` keyed by image id; per-image seeds derive from ``seed``.

    Pass a list as ``records`` to collect ``(image_id, CorruptionRecord)`` pairs.
    """
    preds, gts = {}, {}
    for i in range(n_images):
        image_id = f"synth_{i:04d}"
        truth = generate_grid(replace(grid, image_id=image_id))
        image_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        dets, record = corrupt(truth, replace(noise, seed=image_seed))
        if records is not None:
            records.append((image_id, record))
        preds[image_id], gts[image_id] = dets, truth
    return preds, gts


def _score(dets: DetectionSet, cfg: SweepConfig) -> float:
    mask = rasterize_class_mask(dets, cfg.class_id, *cfg.canvas)
    return regularity_score(mask, cfg.k_max).score


def _run_cell(preds, gts, W, T, cfg: SweepConfig):
    align = AlignConfig(T, W, cfg.refine.align.eps_overlap)
    refine_cfg = replace(cfg.refine, align=align)
    refined, scores, before, after, errors = {}, {}, [], [], []
    for image_id in sorted(preds):
        dets = preds[image_id]
        try:
            out, _ = refine_detections(dets, refine_cfg)
            scores[image_id] = _score(out, cfg)
            before.append(alignment_loss(dets, align).total)
            after.append(alignment_loss(out, align).total)
            refined[image_id] = out
        except Exception as exc:  # quarantine the image, keep the sweep going
            log.warning("W=%s T=%s %s failed: %s", W, T, image_id, exc)
            errors.append(f"{image_id}:{type(exc).__name__}")
    return refined, scores, before, after, errors


def run_sweep(cfg: SweepConfig, preds: Mapping[str, DetectionSet], gts: Mapping[str, DetectionSet]):
    """Run every (W, T) cell and return rows ordered by ``(T, W)``.

    Relative regularity compares a cell's summed scores with the ``W=0``
    cell at the same ``T`` (which is the unrefined input), over the images
    that succeeded in both.  When ``cfg.out_dir`` is set, ``sweep.csv``,
    ``sweep.svg`` and ``sweep_timing.csv`` are written there.
    """
    if not preds:
        raise InputMissing("no detection sets to sweep over")
    if set(preds) != set(gts):
        raise InputMissing("detections and ground truth cover different image ids")
    rows = []
    for T in cfg.T_values:
        baseline = None
        for W in cfg.W_values:
            start = time.perf_counter()
            refined, scores, before, after, errors = _run_cell(preds, gts, W, T, cfg)
            if W == 0.0:
                baseline = scores
            common = sorted(set(scores) & set(baseline))
            try:
                rel = relative_regularity([scores[i] for i in common], [baseline[i] for i in common])
            except (ZeroBaseline, ValueError) as exc:
                rel = math.nan
                errors.append(f"relative_svd:{type(exc).__name__}")
            if refined:
                filtered = {i: confidence_filter(d, cfg.conf) for i, d in refined.items()}
                mAP = map50(filtered, {i: gts[i] for i in refined}).map
            else:
                mAP = math.nan
            rows.append(
                SweepRow(
                    W=W,
                    T=T,
                    relative_svd=rel,
                    map50=mAP,
                    align_before=float(np.mean(before)) if before else math.nan,
                    align_after=float(np.mean(after)) if after else math.nan,
                    n_images=len(refined),
                    seconds=time.perf_counter() - start,
                    errors=";".join(errors),
                )
            )
            log.info("W=%g T=%g relative_svd=%.3f mAP=%.4f", W, T, rel, mAP)
    if cfg.out_dir is not None:
        write_reports(rows, Path(cfg.out_dir))
    return rows


def write_reports(rows: Sequence[SweepRow], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_fields())
    # wall-clock times live apart so sweep.csv stays byte-identical across runs
    with open(out_dir / "sweep_timing.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["W", "T", "seconds"])
        for row in rows:
            writer.writerow([repr(row.W), repr(row.T), f"{row.seconds:.6f}"])
    points = [(r.relative_svd, r.map50, f"W={r.W:g} T={r.T:g}", r.T) for r in rows]
    write_svg_scatter(points, out_dir / "sweep.svg", "relative SVD regularity (%)", "mAP@0.5")


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def _ticks(lo, hi, n=5):
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + step * 0.5:
        ticks.append(round(t, 12))
        t += step
    return ticks


def write_svg_scatter(points, path, xlabel: str, ylabel: str, width=640, height=480) -> None:
    """Scatter plot of ``(x, y, label, group)`` tuples; NaN points are skipped."""
    pts = [p for p in points if not (math.isnan(p[0]) or math.isnan(p[1]))]
    left, right, top, bottom = 70, 20, 20, 60
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    xt, yt = _ticks(min(xs), max(xs)), _ticks(min(ys), max(ys))
    x0, x1, y0, y1 = xt[0], xt[-1], yt[0], yt[-1]

    def sx(v):
        return left + (v - x0) / (x1 - x0) * (width - left - right)

    def sy(v):
        return height - bottom - (v - y0) / (y1 - y0) * (height - top - bottom)

    groups = sorted({p[3] for p in pts})
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
    ]
    for t in xt:
        out.append(f'<line x1="{sx(t):.2f}" y1="{height - bottom}" x2="{sx(t):.2f}" y2="{height - bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{height - bottom + 18}" text-anchor="middle">{t:g}</text>')
    for t in yt:
        out.append(f'<line x1="{left - 5}" y1="{sy(t):.2f}" x2="{left}" y2="{sy(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{(left + width - right) / 2}" y="{height - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="15" y="{(top + height - bottom) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 15 {(top + height - bottom) / 2})">{escape(ylabel)}</text>'
    )
    for x, y, label, group in pts:
        color = _PALETTE[groups.index(group) % len(_PALETTE)]
        out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="{color}"/>')
        out.append(f'<text x="{sx(x) + 6:.2f}" y="{sy(y) - 6:.2f}" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
