"""Set-prediction losses, single-object matching, and the contrastive alignment term.

Every loss accepts :class:`Tensor` inputs (differentiable) or plain arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numerics import Tensor, ops, no_grad
from .numerics.tensor import as_tensor

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    cls: float = 10.0
    l1: float = 5.0
    giou: float = 2.0
    dice: float = 5.0
    focal: float = 2.0
    jsc: float = 5.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be non-negative, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def focal_terms(prob, target, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Elementwise binary focal loss on probabilities clamped to [1e-7, 1-1e-7]."""
    p = ops.clip(as_tensor(prob), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    pos = ops.mul(ops.mul(ops.power(ops.sub(1.0, p), gamma), ops.log(p)), -alpha * y)
    neg = ops.mul(ops.mul(ops.power(p, gamma), ops.log(ops.sub(1.0, p))), -(1.0 - alpha) * (1.0 - y))
    return ops.add(pos, neg)


def focal_loss(prob, target, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    return ops.mean(focal_terms(prob, target, alpha, gamma))


def dice_loss(pred_probs, target, smooth: float = 1.0, axis=None) -> Tensor:
    """``1 - (2 sum(p t) + s) / (sum p + sum t + s)``, reduced over ``axis`` (all by default)."""
    p = as_tensor(pred_probs)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"dice shape mismatch {p.shape} vs {t.shape}")
    inter = ops.sum(ops.mul(p, t), axis=axis)
    denom = ops.add(ops.sum(p, axis=axis), t.sum(axis=axis) + smooth)
    return ops.sub(1.0, ops.div(ops.add(ops.mul(inter, 2.0), smooth), denom))


def box_corners(box: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    cx, cy, w, h = (ops.index(box, (Ellipsis, i)) for i in range(4))
    return (ops.sub(cx, ops.mul(w, 0.5)), ops.sub(cy, ops.mul(h, 0.5)),
            ops.add(cx, ops.mul(w, 0.5)), ops.add(cy, ops.mul(h, 0.5)))


def giou_loss(pred_box, gt_box) -> Tensor:
    """``1 - GIoU`` for (cx, cy, w, h) boxes over the last axis.

    A zero-area box has IoU 0 and the hull is taken from the pair, so the
    result stays finite.
    """
    a, b = as_tensor(pred_box), as_tensor(gt_box)
    ax0, ay0, ax1, ay1 = box_corners(a)
    bx0, by0, bx1, by1 = box_corners(b)
    area_a = ops.mul(ops.sub(ax1, ax0), ops.sub(ay1, ay0))
    area_b = ops.mul(ops.sub(bx1, bx0), ops.sub(by1, by0))
    iw = ops.relu(ops.sub(ops.minimum(ax1, bx1), ops.maximum(ax0, bx0)))
    ih = ops.relu(ops.sub(ops.minimum(ay1, by1), ops.maximum(ay0, by0)))
    inter = ops.mul(iw, ih)
    union = ops.sub(ops.add(area_a, area_b), inter)
    hull = ops.mul(ops.sub(ops.maximum(ax1, bx1), ops.minimum(ax0, bx0)),
                   ops.sub(ops.maximum(ay1, by1), ops.minimum(ay0, by0)))
    tiny = 1e-12
    iou = ops.div(inter, ops.maximum(union, tiny))
    giou = ops.sub(iou, ops.div(ops.sub(hull, union), ops.maximum(hull, tiny)))
    return ops.sub(1.0, giou)


def l1_box(pred_box, gt_box) -> Tensor:
    """Sum of absolute coordinate differences over the last axis."""
    return ops.sum(ops.abs(ops.sub(as_tensor(pred_box), as_tensor(gt_box))), axis=-1)


# matching --------------------------------------------------------------------

def trajectory_terms(mask_logits, class_probs, boxes, gt, w: LossWeights) -> dict[str, Tensor]:
    """Weighted cost components of one query trajectory against the ground truth.

    ``mask_logits [T, H, W]``, ``class_probs [T]``, ``boxes [T, 4]``. Box and
    mask terms are means over valid frames and are absent when no frame is
    valid; the class term is a mean over all frames.
    """
    valid = np.asarray(gt.valid, dtype=bool)
    out = {"cls": ops.mul(focal_loss(class_probs, valid.astype(np.float64)), w.cls)}
    if not valid.any():
        return out
    idx = np.flatnonzero(valid)
    pb = ops.index(as_tensor(boxes), idx)
    gb = np.asarray(gt.boxes, dtype=np.float64)[idx]
    out["l1"] = ops.mul(ops.mean(l1_box(pb, gb)), w.l1)
    out["giou"] = ops.mul(ops.mean(giou_loss(pb, gb)), w.giou)
    probs = ops.sigmoid(ops.index(as_tensor(mask_logits), idx))
    target = np.asarray(gt.masks, dtype=np.float64)[idx]
    out["dice"] = ops.mul(ops.mean(dice_loss(probs, target, axis=(1, 2))), w.dice)
    out["focal"] = ops.mul(ops.mean(ops.mean(focal_terms(probs, target), axis=(1, 2))), w.focal)
    return out


def matching_cost(mask_logits, class_probs, boxes, gt, w: LossWeights) -> float:
    with no_grad():
        terms = trajectory_terms(mask_logits, class_probs, boxes, gt, w)
    return float(sum(t.item() for t in terms.values()))


@dataclass
class MatchResult:
    positive_index: int
    per_query_costs: list[float]


def argmin_lowest(costs) -> int:
    costs = list(costs)
    best = 0
    for i, c in enumerate(costs):
        if c < costs[best]:
            best = i
    return best


def select_positive(mask_logits, class_probs, boxes, gt, w: LossWeights) -> MatchResult:
    """Lowest-cost query trajectory; inputs are per-video ``[T, N, ...]``."""
    ml = mask_logits.data if isinstance(mask_logits, Tensor) else np.asarray(mask_logits)
    cp = class_probs.data if isinstance(class_probs, Tensor) else np.asarray(class_probs)
    bx = boxes.data if isinstance(boxes, Tensor) else np.asarray(boxes)
    costs = [float(c) for c in query_costs(ml, cp, bx, gt, w)]
    return MatchResult(argmin_lowest(costs), costs)


def _np_focal(p, y, alpha=0.25, gamma=2.0):
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return -alpha * y * (1 - p) ** gamma * np.log(p) - (1 - alpha) * (1 - y) * p ** gamma * np.log(1 - p)


def _np_giou(a, b):
    a0, a1 = a[..., :2] - a[..., 2:] / 2, a[..., :2] + a[..., 2:] / 2
    b0, b1 = b[..., :2] - b[..., 2:] / 2, b[..., :2] + b[..., 2:] / 2
    wh = np.maximum(np.minimum(a1, b1) - np.maximum(a0, b0), 0.0)
    inter = wh[..., 0] * wh[..., 1]
    union = np.prod(a1 - a0, axis=-1) + np.prod(b1 - b0, axis=-1) - inter
    hull = np.prod(np.maximum(a1, b1) - np.minimum(a0, b0), axis=-1)
    return 1.0 - (inter / np.maximum(union, 1e-12) - (hull - union) / np.maximum(hull, 1e-12))


def query_costs(mask_logits, class_probs, boxes, gt, w: LossWeights) -> np.ndarray:
    """:func:`matching_cost` for all ``N`` trajectories at once, on plain arrays ``[T, N, ...]``."""
    valid = np.asarray(gt.valid, dtype=bool)
    cost = w.cls * _np_focal(class_probs, valid[:, None].astype(np.float64)).mean(axis=0)
    if not valid.any():
        return cost
    gb = np.asarray(gt.boxes, dtype=np.float64)[valid][:, None]
    pb = boxes[valid]
    cost = cost + w.l1 * np.abs(pb - gb).sum(axis=-1).mean(axis=0)
    cost = cost + w.giou * _np_giou(pb, gb).mean(axis=0)
    z = mask_logits[valid]
    probs = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    t = np.asarray(gt.masks, dtype=np.float64)[valid][:, None]
    dice = 1.0 - (2.0 * (probs * t).sum(axis=(2, 3)) + 1.0) / (probs.sum(axis=(2, 3)) + t.sum(axis=(2, 3)) + 1.0)
    cost = cost + w.dice * dice.mean(axis=0)
    return cost + w.focal * _np_focal(probs, t).mean(axis=(2, 3)).mean(axis=0)


# contrastive alignment -------------------------------------------------------

def jsc_loss(queries, joints, normalize: bool = False) -> Tensor:
    """Symmetric InfoNCE over raw dot products of paired ``[B, C]`` batches."""
    x, y = as_tensor(queries), as_tensor(joints)
    if x.ndim != 2 or x.shape != y.shape:
        raise ValueError(f"jsc_loss needs matching [B, C] inputs, got {x.shape} and {y.shape}")
    if normalize:
        x = ops.div(x, ops.sqrt(ops.sum(ops.mul(x, x), axis=1, keepdims=True)))
        y = ops.div(y, ops.sqrt(ops.sum(ops.mul(y, y), axis=1, keepdims=True)))
    b = x.shape[0]
    logits = ops.matmul(x, ops.transpose(y, (1, 0)))  # [i, j] = x^i . y^j
    diag = (np.arange(b), np.arange(b))
    q2s = ops.index(ops.log_softmax(logits, axis=1), diag)
    s2q = ops.index(ops.log_softmax(logits, axis=0), diag)
    return ops.mul(ops.sum(ops.add(q2s, s2q)), -1.0 / (2 * b))
