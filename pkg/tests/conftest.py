import numpy as np
import pytest

from gridalign.geometry import BBox, DetectionSet


def make_set(rows, image_id="img", canvas=(1000.0, 1000.0)):
    """DetectionSet from ``(class, x1, y1, x2, y2[, conf])`` tuples."""
    boxes = [BBox(int(r[0]), *map(float, r[1:5]), float(r[5]) if len(r) > 5 else 1.0) for r in rows]
    return DetectionSet(image_id, canvas[0], canvas[1], tuple(boxes))


def random_set(rng, n, n_classes=2, canvas=200.0, max_size=40.0, image_id="rand"):
    rows = []
    for _ in range(n):
        w, h = rng.uniform(2.0, max_size, size=2)
        x1, y1 = rng.uniform(0.0, canvas - w), rng.uniform(0.0, canvas - h)
        rows.append((int(rng.integers(n_classes)), x1, y1, x1 + w, y1 + h, float(rng.uniform())))
    return make_set(rows, image_id, (canvas, canvas))


def jittered_grid(rng, rows=3, cols=4, jitter=4.0, n_classes=2, pitch=40.0, size=(20.0, 25.0)):
    out = []
    for r in range(rows):
        for c in range(cols):
            x1, y1 = 10 + c * pitch, 10 + r * pitch
            e = rng.uniform(-jitter, jitter, 4)
            out.append((int(rng.integers(n_classes)), x1 + e[0], y1 + e[1], x1 + size[0] + e[2], y1 + size[1] + e[3]))
    return make_set(out, canvas=(300.0, 300.0))


def far_from_kinks(dets, T, margin=0.1):
    """True when no pair sits within ``margin`` px of a kink or a condition boundary."""
    c, cls = dets.coords, dets.class_ids
    for i in range(len(c)):
        for j in range(i + 1, len(c)):
            if cls[i] != cls[j]:
                continue
            iw = min(c[i, 2], c[j, 2]) - max(c[i, 0], c[j, 0])
            ih = min(c[i, 3], c[j, 3]) - max(c[i, 1], c[j, 1])
            if iw > 0 and ih > 0:
                if min(iw, ih) < margin:
                    return False
            elif max(iw, ih) > -margin and min(iw, ih) > -margin:
                return False
            for k in range(4):
                d = abs(c[i, k] - c[j, k])
                if d < margin or abs(d - T) < margin:
                    return False
    return True


def gradient_case(rng, T=9.0):
    while True:
        dets = jittered_grid(rng)
        if far_from_kinks(dets, T):
            return dets


def toy_case(rng, n_images=None):
    """Random toy problem: <= 3 images, <= 2 classes, <= 5 boxes per set."""
    n_images = n_images or int(rng.integers(1, 4))
    preds, gts = {}, {}
    for i in range(n_images):
        image_id = f"im{i}"
        gt_rows = []
        for _ in range(int(rng.integers(0, 6))):
            x, y = rng.uniform(0, 40, 2)
            gt_rows.append((int(rng.integers(2)), x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20)))
        pred_rows = []
        for _ in range(int(rng.integers(0, 6))):
            if gt_rows and rng.uniform() < 0.6:
                c, *bx = gt_rows[int(rng.integers(len(gt_rows)))]
                bx = np.array(bx) + rng.uniform(-4, 4, 4)
                bx[2:] = np.maximum(bx[2:], bx[:2] + 1)
                c = c if rng.uniform() < 0.85 else 1 - c
            else:
                x, y = rng.uniform(0, 40, 2)
                c, bx = int(rng.integers(2)), (x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20))
            # coarse confidences so ties appear
            pred_rows.append((c, *bx, float(rng.choice([0.3, 0.5, 0.7, 0.9, float(rng.uniform())]))))
        preds[image_id] = make_set(pred_rows, image_id, (80, 80))
        gts[image_id] = make_set(gt_rows, image_id, (80, 80))
    return preds, gts


def as_oracle_input(preds, gts):
    p = {i: [(bx.class_id, bx.confidence, bx.as_tuple()) for bx in d.boxes] for i, d in preds.items()}
    g = {i: [(bx.class_id, bx.as_tuple()) for bx in d.boxes] for i, d in gts.items()}
    return p, g


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)
