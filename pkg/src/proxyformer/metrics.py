"""Region, boundary and retrieval-style metrics for binary video masks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PRECISION_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return p, g


def jaccard(pred, gt) -> float:
    p, g = _pair(pred, gt)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def boundary_map(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with a 4-neighbour outside the mask (the image border counts as outside)."""
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    core = m[1:-1, 1:-1]
    interior = m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
    return core & ~interior


def default_tolerance(shape) -> int:
    return int(math.ceil(0.008 * math.hypot(*shape[-2:])))


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy * yy + xx * xx <= r * r


def boundary_f(pred, gt, tolerance: int | None = None) -> float:
    p, g = _pair(pred, gt)
    tol = default_tolerance(p.shape) if tolerance is None else tolerance
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    bp, bg = boundary_map(p), boundary_map(g)
    n_p, n_g = bp.sum(), bg.sum()
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    if tol > 0:
        fp = _disk(tol)
        near_g = ndimage.binary_dilation(bg, structure=fp)
        near_p = ndimage.binary_dilation(bp, structure=fp)
    else:
        near_g, near_p = bg, bp
    precision = (bp & near_g).sum() / n_p
    recall = (bg & near_p).sum() / n_g
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def precision_at_k(ious, k: float) -> float:
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ValueError("precision_at_k needs at least one IoU")
    return float((ious > k).sum() / ious.size)


def mean_ap(ious) -> float:
    if len(ious) == 0:
        raise ValueError("mean_ap needs at least one IoU")
    return float(np.mean([precision_at_k(ious, k) for k in MAP_THRESHOLDS]))


def overall_and_mean_iou(pairs) -> tuple[float, float]:
    """Pooled IoU (sum of intersections over sum of unions) and the per-pair average."""
    if len(pairs) == 0:
        raise ValueError("need at least one mask pair")
    inter_total = union_total = 0
    per = []
    for pred, gt in pairs:
        p, g = _pair(pred, gt)
        inter = int(np.logical_and(p, g).sum())
        union = int(np.logical_or(p, g).sum())
        inter_total += inter
        union_total += union
        per.append(1.0 if union == 0 else inter / union)
    overall = 1.0 if union_total == 0 else inter_total / union_total
    return float(overall), float(np.mean(per))


@dataclass
class EvalReport:
    J: float
    F: float
    JandF: float
    precision_at: dict[float, float] = field(default_factory=dict)
    mAP: float = 0.0
    overall_iou: float = 0.0
    mean_iou: float = 0.0

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "F": self.F,
            "JandF": self.JandF,
            "precision_at": {f"{k:.1f}": v for k, v in sorted(self.precision_at.items())},
            "mAP": self.mAP,
            "overall_iou": self.overall_iou,
            "mean_iou": self.mean_iou,
        }

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2)


def video_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """IoU of a whole trajectory, pooling pixels over frames."""
    p, g = _pair(pred, gt)
    union = np.logical_or(p, g).sum()
    return 1.0 if union == 0 else float(np.logical_and(p, g).sum() / union)


def evaluate(pred_masks, gt_masks, tolerance: int | None = None,
             thresholds=PRECISION_THRESHOLDS) -> EvalReport:
    """``pred_masks`` and ``gt_masks``: one ``[T, H, W]`` binary array per video.

    J and F are averaged over frames within a video, then over videos.
    Precision@K and mAP use one pooled IoU per video.
    """
    if len(pred_masks) != len(gt_masks):
        raise ValueError(f"{len(pred_masks)} predictions for {len(gt_masks)} videos")
    if len(gt_masks) == 0:
        raise ValueError("nothing to evaluate")
    js, fs, ious, pairs = [], [], [], []
    for pred, gt in zip(pred_masks, gt_masks):
        pred, gt = _pair(pred, gt)
        js.append(np.mean([jaccard(p, g) for p, g in zip(pred, gt)]))
        fs.append(np.mean([boundary_f(p, g, tolerance) for p, g in zip(pred, gt)]))
        ious.append(video_iou(pred, gt))
        pairs.extend(zip(pred, gt))
    J, F = float(np.mean(js)), float(np.mean(fs))
    overall, mean = overall_and_mean_iou(pairs)
    return EvalReport(J=J, F=F, JandF=(J + F) / 2,
                      precision_at={k: precision_at_k(ious, k) for k in thresholds},
                      mAP=mean_ap(ious), overall_iou=overall, mean_iou=mean)
