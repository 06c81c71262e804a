"""Command-line entry point: ``gridalign <command> ...``."""

from __future__ import annotations

import csv
import functools
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import data_io
from .alignment import AlignConfig, alignment_loss, weighted_loss
from .evaluation import DEFAULT_CONF, DEFAULT_NMS_IOU, confidence_filter, map50, nms
from .exceptions import GridAlignError, InputMissing
from .refine import RefineConfig, refine_detections
from .regularity import DEFAULT_CANVAS, DEFAULT_K_MAX, rasterize_class_mask, read_pgm, regularity_score, write_pgm
from .sweep import SweepConfig, make_synthetic_dataset, run_sweep
from .synth import GridSpec, NoiseSpec


def _floats(ctx, param, value):
    if value is None:
        return None
    try:
        return tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}") from None


def _size(ctx, param, value):
    if value is None:
        return None
    try:
        w, h = value.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise click.BadParameter(f"expected WIDTHxHEIGHT, got {value!r}") from None


def reports_errors(func):
    """Turn package, value and I/O errors into one ``error: <Type>: <message>`` line and exit 1."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except BrokenPipeError:
            # stdout closed early (e.g. piped into head); silence the flush at exit
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
            sys.exit(1)
        except (GridAlignError, OSError, ValueError) as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _load(path):
    if not Path(path).exists():
        raise InputMissing(f"{path} does not exist")
    return data_io.load_detections(path)


def align_options(func):
    func = click.option("--eps-overlap", type=float, default=1e-9, show_default=True, help="Largest IoU treated as no overlap.")(func)
    func = click.option("--W", "W", type=float, default=0.5, show_default=True, help="Alignment weight.")(func)
    func = click.option("--T", "T", type=float, default=9.0, show_default=True, help="Alignment threshold in pixels.")(func)
    return func


def refine_options(func):
    func = click.option("--tol", type=float, default=1e-3, show_default=True)(func)
    func = click.option("--max-iters", type=int, default=500, show_default=True)(func)
    func = click.option("--step-size", type=float, default=0.5, show_default=True)(func)
    func = click.option("--lambda-fid", type=float, default=0.1, show_default=True, help="Weight of the L1 anchor.")(func)
    return func


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Alignment loss, refinement and evaluation tools for facade detections."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@align_options
@click.option("--in", "in_path", required=True, type=click.Path(), help="Interchange detection file.")
@reports_errors
def loss(T, W, eps_overlap, in_path):
    """Print the alignment loss breakdown of every image."""
    cfg = AlignConfig(T, W, eps_overlap)
    for image_id, dets in _load(in_path).items():
        b = alignment_loss(dets, cfg)
        click.echo(
            f"image_id={image_id} sum_x={b.sum_x!r} sum_y={b.sum_y!r} n_x={b.n_x} n_y={b.n_y} "
            f"total={b.total!r} weighted={weighted_loss(b, cfg)!r}"
        )


@main.command()
@align_options
@refine_options
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path(), help="Refined interchange file.")
@click.option("--trace", "trace_path", type=click.Path(), help="Optional per-iteration trace CSV.")
@reports_errors
def refine(T, W, eps_overlap, lambda_fid, step_size, max_iters, tol, in_path, out_path, trace_path):
    """Refine detections toward a common grid."""
    cfg = RefineConfig(AlignConfig(T, W, eps_overlap), lambda_fid, step_size, max_iters, tol)
    refined, traces = {}, {}
    for image_id, dets in _load(in_path).items():
        refined[image_id], traces[image_id] = refine_detections(dets, cfg)
    data_io.save_detections(refined, out_path)
    if trace_path:
        with open(trace_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["image_id", "iteration", "objective", "alignment", "max_update"])
            for image_id, trace in traces.items():
                for i, obj, align, upd in trace.rows():
                    writer.writerow([image_id, i, repr(obj), repr(align), repr(upd)])
    for image_id, trace in traces.items():
        click.echo(
            f"image_id={image_id} iterations={trace.n_iters} "
            f"converged={trace.converged} alignment={alignment_loss(refined[image_id], cfg.align).total!r}"
        )


@main.command("svd-metric")
@click.option("--in", "in_path", type=click.Path(), help="Interchange detection file.")
@click.option("--pgm", "pgm_path", type=click.Path(), help="Score a binary PGM mask instead.")
@click.option("--class-id", type=int, default=0, show_default=True)
@click.option("--canvas", default=f"{DEFAULT_CANVAS}x{DEFAULT_CANVAS}", callback=_size, show_default=True)
@click.option("--k-max", type=int, default=DEFAULT_K_MAX, show_default=True)
@click.option("--curve", "curve_path", type=click.Path(), help="Write per-k MSE CSV (single image) or directory.")
@click.option("--mask-dir", type=click.Path(file_okay=False), help="Export rasterized masks as PGM.")
@reports_errors
def svd_metric(in_path, pgm_path, class_id, canvas, k_max, curve_path, mask_dir):
    """SVD regularity score (sum of rank-k MSEs) per image."""
    if bool(in_path) == bool(pgm_path):
        raise click.UsageError("give exactly one of --in or --pgm")
    if pgm_path:
        masks = {Path(pgm_path).stem: read_pgm(pgm_path)}
    else:
        masks = {i: rasterize_class_mask(d, class_id, *canvas) for i, d in _load(in_path).items()}
    for image_id, mask in masks.items():
        curve = regularity_score(mask, k_max)
        if curve_path:
            target = Path(curve_path)
            if len(masks) > 1:
                target.mkdir(parents=True, exist_ok=True)
                target = target / f"{image_id}.csv"
            curve.to_csv(target)
        if mask_dir:
            Path(mask_dir).mkdir(parents=True, exist_ok=True)
            write_pgm(mask, Path(mask_dir) / f"{image_id}.pgm")
        click.echo(f"image_id={image_id} score={curve.score!r} k_max={curve.k_max}")


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path())
@click.option("--gt", "gt_path", required=True, type=click.Path())
@click.option("--conf", type=float, default=DEFAULT_CONF, show_default=True, help="Confidence floor.")
@click.option("--nms-iou", type=float, default=DEFAULT_NMS_IOU, show_default=True, help="NMS IoU; 0 disables NMS.")
@click.option("--iou", type=float, default=0.5, show_default=True, help="Matching IoU threshold.")
@click.option("--csv", "csv_path", type=click.Path(), help="Per-class CSV report.")
@reports_errors
def eval_cmd(pred_path, gt_path, conf, nms_iou, iou, csv_path):
    """mAP of predictions against ground truth after confidence filtering and NMS."""
    preds = _load(pred_path)
    gts = _load(gt_path)
    # images without predictions are simply empty
    for image_id, gt in gts.items():
        preds.setdefault(image_id, gt.with_boxes(()))
    preds = {i: confidence_filter(d, conf) for i, d in preds.items()}
    if nms_iou > 0:
        preds = {i: nms(d, nms_iou) for i, d in preds.items()}
    report = map50(preds, gts, iou)
    click.echo(report.summary())
    if csv_path:
        Path(csv_path).write_text(report.to_csv())


@main.command()
@click.option("--rows", type=int, default=5, show_default=True)
@click.option("--cols", type=int, default=8, show_default=True)
@click.option("--width", type=float, default=20.0, show_default=True)
@click.option("--height", type=float, default=30.0, show_default=True)
@click.option("--h-spacing", type=float, default=15.0, show_default=True)
@click.option("--v-spacing", type=float, default=15.0, show_default=True)
@click.option("--margin", type=float, default=20.0, show_default=True)
@click.option("--class-id", type=int, default=0, show_default=True)
@click.option("--jitter", type=float, default=0.0, show_default=True)
@click.option("--shear", type=float, default=0.0, show_default=True)
@click.option("--dropout", type=float, default=0.0, show_default=True)
@click.option("--size-noise", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-images", type=int, default=1, show_default=True)
@click.option("--gt-out", required=True, type=click.Path())
@click.option("--det-out", required=True, type=click.Path())
@click.option("--record-out", type=click.Path(), help="Corruption records, one JSON line per image.")
@reports_errors
def synth(rows, cols, width, height, h_spacing, v_spacing, margin, class_id, jitter, shear, dropout,
          size_noise, seed, n_images, gt_out, det_out, record_out):
    """Generate perfect grids and corrupted copies of them."""
    grid = GridSpec(rows, cols, width, height, h_spacing, v_spacing, margin, class_id)
    noise = NoiseSpec(jitter, shear, dropout, size_noise, seed)
    records = []
    dets, gts = make_synthetic_dataset(grid, noise, n_images, seed, records)
    if record_out:
        lines = [json.dumps({"image_id": i, **json.loads(r.to_json())}, sort_keys=True) for i, r in records]
        Path(record_out).write_text("".join(line + "\n" for line in lines))
    data_io.save_detections(gts, gt_out)
    data_io.save_detections(dets, det_out)
    click.echo(f"wrote {n_images} images, {sum(len(d) for d in dets.values())} detections")


@main.command("convert-cmp")
@click.option("--ann-dir", required=True, type=click.Path(file_okay=False), help="Directory of CMP .xml annotations.")
@click.option("--size", callback=_size, help="Image size WIDTHxHEIGHT shared by every file.")
@click.option("--sizes", "sizes_path", type=click.Path(), help="CSV with image_id,width,height rows.")
@click.option("--labels", "labels_path", type=click.Path(), help="Label table, 'id = name' per line.")
@click.option("--crop-label", type=int, help="Label whose boxes define facade crops (CMP facade is 2).")
@click.option("--out", "out_path", required=True, type=click.Path())
@reports_errors
def convert_cmp(ann_dir, size, sizes_path, labels_path, crop_label, out_path):
    """Convert CMP annotations to the interchange format, optionally cropped per facade."""
    if not (size or sizes_path):
        raise click.UsageError("give --size or --sizes")
    sizes = {}
    if sizes_path:
        with open(sizes_path) as fh:
            for row in csv.reader(fh):
                if row and not row[0].startswith("#") and row[0] != "image_id":
                    sizes[row[0]] = (float(row[1]), float(row[2]))
    labels = data_io.read_label_table(labels_path) if labels_path else data_io.CMP_LABELS
    files = sorted(Path(ann_dir).glob("*.xml"))
    if not files:
        raise InputMissing(f"no .xml files in {ann_dir}")
    out = {}
    for path in files:
        image_id = path.stem
        if image_id in sizes:
            w, h = sizes[image_id]
        elif size:
            w, h = size
        else:
            raise InputMissing(f"no image size for {image_id}")
        dets = data_io.parse_cmp_annotation(path.read_text(), w, h, image_id, labels)
        if crop_label is None:
            out[image_id] = dets
            continue
        crops = [b for b in dets.boxes if b.class_id == crop_label]
        rest = dets.with_boxes(b for b in dets.boxes if b.class_id != crop_label)
        for n, c in enumerate(crops):
            sample = data_io.crop_to_facade(rest, c.as_tuple(), f"{image_id}_{n}")
            out[sample.sample_id] = sample.annotations
    data_io.save_detections(out, out_path)
    click.echo(f"wrote {len(out)} samples, {sum(len(d) for d in out.values())} boxes")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(), help="Interchange file or text file of ids.")
@click.option("--ratios", default="0.8,0.1,0.1", callback=_floats, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), help="Write the split as JSON.")
@reports_errors
def split(in_path, ratios, seed, out_path):
    """Seeded train/val/test split of sample ids."""
    text = Path(in_path).read_text()
    if text.lstrip().startswith(("{", "#")):
        ids = list(data_io.parse_detections(text))
    else:
        ids = [line.strip() for line in text.splitlines() if line.strip()]
    result = data_io.split_dataset(ids, ratios, seed)
    payload = {"seed": seed, "ratios": list(result.ratios), "train": list(result.train),
               "val": list(result.val), "test": list(result.test)}
    if out_path:
        Path(out_path).write_text(json.dumps(payload, indent=1) + "\n")
    click.echo("train={} val={} test={}".format(*result.sizes()))


@main.command()
@click.option("--W", "W_values", default="0,0.1,0.5,1.0", callback=_floats, show_default=True)
@click.option("--T", "T_values", default="6,7,9,10,12", callback=_floats, show_default=True)
@refine_options
@click.option("--eps-overlap", type=float, default=1e-9, show_default=True)
@click.option("--pred", "pred_path", type=click.Path(), help="Detections to refine (else synthetic).")
@click.option("--gt", "gt_path", type=click.Path(), help="Ground truth for --pred.")
@click.option("--class-id", type=int, default=0, show_default=True, help="Class scored by the SVD metric.")
@click.option("--canvas", default=f"{DEFAULT_CANVAS}x{DEFAULT_CANVAS}", callback=_size, show_default=True)
@click.option("--k-max", type=int, default=DEFAULT_K_MAX, show_default=True)
@click.option("--conf", type=float, default=DEFAULT_CONF, show_default=True)
@click.option("--n-images", type=int, default=10, show_default=True, help="Synthetic images.")
@click.option("--rows", type=int, default=5, show_default=True)
@click.option("--cols", type=int, default=8, show_default=True)
@click.option("--h-spacing", type=float, default=15.0, show_default=True)
@click.option("--margin", type=float, default=30.0, show_default=True)
@click.option("--jitter", type=float, default=2.0, show_default=True)
@click.option("--shear", type=float, default=1.5, show_default=True)
@click.option("--dropout", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@reports_errors
def sweep(W_values, T_values, lambda_fid, step_size, max_iters, tol, eps_overlap, pred_path, gt_path, class_id,
          canvas, k_max, conf, n_images, rows, cols, h_spacing, margin, jitter, shear, dropout, seed, out_dir):
    """Refine and score a dataset over a W x T grid; writes sweep.csv and sweep.svg."""
    if bool(pred_path) != bool(gt_path):
        raise click.UsageError("--pred and --gt go together")
    if pred_path:
        preds, gts = _load(pred_path), _load(gt_path)
        for image_id, gt in gts.items():
            preds.setdefault(image_id, gt.with_boxes(()))
    else:
        grid = GridSpec(rows, cols, h_spacing=h_spacing, margin=margin, class_id=class_id)
        preds, gts = make_synthetic_dataset(grid, NoiseSpec(jitter, shear, dropout, seed=seed), n_images, seed)
    cfg = SweepConfig(
        W_values=W_values,
        T_values=T_values,
        refine=RefineConfig(AlignConfig(1.0, 0.0, eps_overlap), lambda_fid, step_size, max_iters, tol),
        class_id=class_id,
        canvas=canvas,
        k_max=k_max,
        conf=conf,
        out_dir=Path(out_dir),
        seed=seed,
    )
    rows_out = run_sweep(cfg, preds, gts)
    for r in rows_out:
        click.echo(f"W={r.W:g} T={r.T:g} relative_svd={r.relative_svd:.4f} map50={r.map50:.4f} "
                   f"align_before={r.align_before:.4f} align_after={r.align_after:.4f}")


if __name__ == "__main__":
    main()
