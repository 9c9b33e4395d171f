"""Pixel-loop reference implementations of the evaluation metrics, plus a fixed test fixture.

Everything here works on nested Python lists and checks proximity by
scanning every pixel pair, so it shares no code path with the package.
"""

import math


def _cells(mask):
    return [(y, x) for y, row in enumerate(mask) for x, v in enumerate(row) if v]


def iou(pred, gt):
    a, b = set(_cells(pred)), set(_cells(gt))
    union = len(a | b)
    return 1.0 if union == 0 else len(a & b) / union


def boundary(mask):
    h, w = len(mask), len(mask[0])
    out = set()
    for y, x in _cells(mask):
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            yy, xx = y + dy, x + dx
            if not (0 <= yy < h and 0 <= xx < w) or not mask[yy][xx]:
                out.add((y, x))
                break
    return out


def f_measure(pred, gt, tol=None):
    if tol is None:
        tol = math.ceil(0.008 * math.hypot(len(pred), len(pred[0])))
    bp, bg = boundary(pred), boundary(gt)
    if not bp and not bg:
        return 1.0
    if not bp or not bg:
        return 0.0

    def near(p, others):
        return any((p[0] - o[0]) ** 2 + (p[1] - o[1]) ** 2 <= tol * tol for o in others)

    precision = sum(near(p, bg) for p in bp) / len(bp)
    recall = sum(near(g, bp) for g in bg) / len(bg)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def video_iou(pred_video, gt_video):
    inter = union = 0
    for p, g in zip(pred_video, gt_video):
        a, b = set(_cells(p)), set(_cells(g))
        inter += len(a & b)
        union += len(a | b)
    return 1.0 if union == 0 else inter / union


def report(preds, gts, thresholds=(0.5, 0.6, 0.7, 0.8, 0.9)):
    js, fs, ious = [], [], []
    inter = union = 0
    per = []
    for pv, gv in zip(preds, gts):
        js.append(sum(iou(p, g) for p, g in zip(pv, gv)) / len(gv))
        fs.append(sum(f_measure(p, g) for p, g in zip(pv, gv)) / len(gv))
        ious.append(video_iou(pv, gv))
        for p, g in zip(pv, gv):
            a, b = set(_cells(p)), set(_cells(g))
            inter += len(a & b)
            union += len(a | b)
            per.append(1.0 if not (a | b) else len(a & b) / len(a | b))
    J = sum(js) / len(js)
    F = sum(fs) / len(fs)
    grid = [round(0.5 + 0.05 * i, 2) for i in range(10)]
    prec = {k: sum(v > k for v in ious) / len(ious) for k in thresholds}
    return {
        "J": J, "F": F, "JandF": (J + F) / 2,
        "precision_at": prec,
        "mAP": sum(sum(v > k for v in ious) / len(ious) for k in grid) / len(grid),
        "overall_iou": 1.0 if union == 0 else inter / union,
        "mean_iou": sum(per) / len(per),
    }


def make_fixture(seed=0, count=20, frames=3, size=24):
    """Prediction/ground-truth video pairs: shifted, eroded, empty and exact predictions."""
    import numpy as np

    rng = np.random.default_rng(seed)
    preds, gts = [], []
    yy, xx = np.mgrid[0:size, 0:size]
    for i in range(count):
        cy, cx = rng.uniform(6, size - 6, size=2)
        r = rng.uniform(2.5, 6)
        gt = np.stack([(yy - cy - t) ** 2 + (xx - cx) ** 2 <= r * r for t in range(frames)])
        kind = i % 5
        if kind == 0:
            pred = gt.copy()
        elif kind == 1:
            pred = np.roll(gt, int(rng.integers(1, 4)), axis=2)
        elif kind == 2:
            pred = gt & (rng.uniform(size=gt.shape) > 0.3)
        elif kind == 3:
            pred = np.zeros_like(gt)
            if i % 2:
                gt[-1] = False
        else:
            pred = rng.uniform(size=gt.shape) > 0.8
        preds.append(pred.astype(np.uint8))
        gts.append(gt.astype(np.uint8))
    return preds, gts
