"""Independent reference implementations used to check the production code.

Each oracle takes the slow, obvious route and shares no code with the
package beyond the data types.
"""

import itertools
import math

import numpy as np


def raster_iou(a, b):
    """IoU by counting unit pixels of integer-cornered boxes ``(x1, y1, x2, y2)``."""
    size = int(max(a[2], a[3], b[2], b[3])) + 1
    ma = np.zeros((size, size), dtype=bool)
    mb = np.zeros((size, size), dtype=bool)
    ma[int(a[1]) : int(a[3]), int(a[0]) : int(a[2])] = True
    mb[int(b[1]) : int(b[3]), int(b[0]) : int(b[2])] = True
    union = (ma | mb).sum()
    return (ma & mb).sum() / union


def _overlap_area(p, q):
    w = min(p[2], q[2]) - max(p[0], q[0])
    h = min(p[3], q[3]) - max(p[1], q[1])
    return w * h if w > 0 and h > 0 else 0.0


def brute_force_loss(boxes, T, eps_overlap=1e-9):
    """Re-enumerate every pair and test each condition on its own.

    ``boxes`` is a list of ``(class_id, x1, y1, x2, y2)`` tuples.  Returns
    ``(sum_x, sum_y, n_x, n_y, total)``.
    """
    terms = {"x": [], "y": []}
    edges = {"x": (1, 3), "y": (2, 4)}
    for i, j in itertools.combinations(range(len(boxes)), 2):
        a, b = boxes[i], boxes[j]
        if a[0] != b[0]:
            continue
        inter = _overlap_area(a[1:], b[1:])
        union = (a[3] - a[1]) * (a[4] - a[2]) + (b[3] - b[1]) * (b[4] - b[2]) - inter
        if inter / union > eps_overlap:
            continue
        for axis, (e1, e2) in edges.items():
            d1 = abs(a[e1] - b[e1])
            d2 = abs(a[e2] - b[e2])
            if d1 < T and d2 < T:
                terms[axis].append(d1 + d2)
    sx, sy = math.fsum(terms["x"]), math.fsum(terms["y"])
    nx, ny = len(terms["x"]), len(terms["y"])
    return sx, sy, nx, ny, sx / max(nx, 1) + sy / max(ny, 1)


def central_difference(f, x, h=1e-3):
    """Central finite-difference gradient of scalar ``f`` at flat array ``x``."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[k] += h
        xm.flat[k] -= h
        grad.flat[k] = (f(xp) - f(xm)) / (2 * h)
    return grad


def svd_tail_mse(matrix, k):
    """Rank-k MSE from the Eckart-Young tail of the eigenvalues of ``M^T M``."""
    m = np.asarray(matrix, dtype=float)
    eig = np.linalg.eigvalsh(m.T @ m)[::-1]
    eig = np.clip(eig, 0.0, None)
    return float(eig[k:].sum() / m.size)


def svd_reconstruction_mse(matrix, k):
    """Rank-k MSE by explicit reconstruction with SciPy's gesvd driver."""
    from scipy.linalg import svd

    m = np.asarray(matrix, dtype=float)
    u, s, vt = svd(m, lapack_driver="gesvd")
    approx = u[:, :k] @ np.diag(s[:k]) @ vt[:k]
    return float(((m - approx) ** 2).mean())


def pixel_center_mask(boxes, width, height, scale=1.0):
    """Mask with pixel (r, c) set when its center is inside any box (loop over pixels)."""
    mask = np.zeros((height, width), dtype=np.uint8)
    for r in range(height):
        cy = r + 0.5
        for c in range(width):
            cx = c + 0.5
            for x1, y1, x2, y2 in boxes:
                if x1 * scale <= cx < x2 * scale and y1 * scale <= cy < y2 * scale:
                    mask[r, c] = 1
                    break
    return mask


def exhaustive_ap(preds_by_image, gts_by_image, class_id, iou_threshold=0.5):
    """AP by trying every confidence cutoff and re-matching from scratch.

    ``preds_by_image`` maps image id to a list of ``(class, conf, box)``;
    ``gts_by_image`` maps image id to a list of ``(class, box)``.  Returns
    the area under the interpolated PR envelope, or ``None`` without
    ground truth.
    """
    n_gt = sum(1 for gts in gts_by_image.values() for c, _ in gts if c == class_id)
    if n_gt == 0:
        return None
    cutoffs = sorted({conf for preds in preds_by_image.values() for c, conf, _ in preds if c == class_id}, reverse=True)
    points = []
    for cut in cutoffs:
        tp = fp = 0
        for image_id, preds in preds_by_image.items():
            kept = [(conf, i, box) for i, (c, conf, box) in enumerate(preds) if c == class_id and conf >= cut]
            kept.sort(key=lambda t: (-t[0], t[1]))
            gts = [box for c, box in gts_by_image[image_id] if c == class_id]
            used = [False] * len(gts)
            for _, _, box in kept:
                best, best_iou = None, -1.0
                for g, gbox in enumerate(gts):
                    if used[g]:
                        continue
                    inter = _overlap_area(box, gbox)
                    union = (box[2] - box[0]) * (box[3] - box[1]) + (gbox[2] - gbox[0]) * (gbox[3] - gbox[1]) - inter
                    value = inter / union
                    if value > best_iou:
                        best, best_iou = g, value
                if best is not None and best_iou >= iou_threshold:
                    used[best] = True
                    tp += 1
                else:
                    fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    # integrate the envelope p(r) = max precision at recall >= r over [0, 1]
    area = 0.0
    prev_r = 0.0
    for r in sorted({r for r, _ in points}):
        envelope = max(p for rr, p in points if rr >= r)
        area += (r - prev_r) * envelope
        prev_r = r
    return area
