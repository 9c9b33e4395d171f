"""Mask decoder, dynamic-kernel mask head, reference head and joint embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import FeaturePyramid, TextFeatures
from .cmie import ProxyQueries
from .numerics import MLP, Conv2d, Linear, Module, Tensor, ops


@dataclass
class SegFeatures:
    f: Tensor  # [B, T, H0/4, W0/4, C_seg]


@dataclass
class PredictionSet:
    mask_logits: Tensor  # [B, T, N, H0, W0]
    class_logits: Tensor  # [B, T, N]
    boxes: Tensor  # [B, T, N, 4] normalised (cx, cy, w, h)

    @property
    def class_probs(self) -> np.ndarray:
        z = self.class_logits.data
        return 1.0 / (1.0 + np.exp(-z))


@dataclass
class JSCEmbeddings:
    video_level_queries: Tensor  # [B, N, C]
    positive_query: Tensor  # [B, C]
    joint: Tensor  # [B, C]


class FPNDecoder(Module):
    def __init__(self, rng: np.random.Generator, level_channels: tuple[int, int, int], width: int, seg_dim: int):
        c4, c8, c16 = level_channels
        self.top = Conv2d(rng, c16, width, kernel=1)
        self.lateral8 = Conv2d(rng, c8, width, kernel=1)
        self.smooth8 = Conv2d(rng, width, width, kernel=3, padding=1)
        self.lateral4 = Conv2d(rng, c4, width, kernel=1)
        self.out = Conv2d(rng, width, seg_dim, kernel=3, padding=1)


def fpn_decode(pyramid: FeaturePyramid, encoded_video: Tensor, fpn: FPNDecoder) -> SegFeatures:
    """Top-down merge of the encoded stride-16 map with the stride-8 and stride-4 levels."""
    p4, p8, p16 = pyramid.levels
    if encoded_video.shape[:4] != p16.shape[:4]:
        raise ValueError(f"encoded video {encoded_video.shape} does not match stride-16 level {p16.shape}")
    b, t = encoded_video.shape[:2]

    def frames(x: Tensor) -> Tensor:
        return ops.reshape(x, (b * t,) + x.shape[2:])

    x = fpn.top(frames(encoded_video))
    x = ops.add(ops.upsample_nearest2x(x), fpn.lateral8(frames(p8)))
    x = ops.relu(fpn.smooth8(x))
    x = ops.add(ops.upsample_nearest2x(x), fpn.lateral4(frames(p4)))
    seg = fpn.out(ops.relu(x))
    return SegFeatures(ops.reshape(seg, (b, t) + seg.shape[1:]))


def dynamic_mask_logits(seg: SegFeatures, kernels: Tensor, out_h: int, out_w: int) -> Tensor:
    """Per-query 1x1 convolution of the seg map followed by bilinear upsampling."""
    f = seg.f
    b, t, h, w, cs = f.shape
    if kernels.shape[-1] != cs:
        raise RuntimeError(f"kernel width {kernels.shape[-1]} != seg channels {cs}")
    n = kernels.shape[2]
    fmat = ops.transpose(ops.reshape(f, (b, t, h * w, cs)), (0, 1, 3, 2))  # [B, T, Cs, HW]
    low = ops.reshape(ops.matmul(kernels, fmat), (b, t, n, h, w))
    return ops.resize_bilinear(low, out_h, out_w)


def predict_masks(seg: SegFeatures, proxies: ProxyQueries, kernel_head: MLP, out_h: int, out_w: int) -> Tensor:
    return dynamic_mask_logits(seg, kernel_head(proxies.q), out_h, out_w)


class ReferenceHead(Module):
    def __init__(self, rng: np.random.Generator, width: int, num_classes: int = 1):
        self.cls = Linear(rng, width, num_classes)
        self.box = MLP(rng, [width, width, width, 4])


def reference_head(proxies: ProxyQueries, head: ReferenceHead) -> tuple[Tensor, Tensor]:
    """Class logits ``[B, T, N]`` (single referred-ness class) and sigmoid boxes ``[B, T, N, 4]``."""
    logits = head.cls(proxies.q)
    logits = ops.reshape(logits, logits.shape[:-1])
    boxes = ops.sigmoid(head.box(proxies.q))
    return logits, boxes


class JointEmbedding(Module):
    """Linear map of the pooled video and text features to the query width."""

    def __init__(self, rng: np.random.Generator, width: int, concat: bool = True):
        self.psi = Linear(rng, 2 * width if concat else width, width)
        self.concat = concat


def masked_text_mean(text: TextFeatures) -> Tensor:
    m = text.mask.astype(np.float64)
    weights = m / m.sum(axis=1, keepdims=True)
    return ops.sum(ops.mul(text.features, weights[..., None]), axis=1)


def jsc_embed(proxies: ProxyQueries, encoded_video: Tensor, text: TextFeatures,
              positive_index, head: JointEmbedding) -> JSCEmbeddings:
    """Temporal mean of the proxies, the selected row, and the joint video-text vector."""
    q = proxies.q
    b, t, n, c = q.shape
    pos = np.atleast_1d(np.asarray(positive_index, dtype=np.int64))
    if pos.shape != (b,):
        raise ValueError(f"need one positive index per video, got {pos.shape} for batch {b}")
    if pos.min() < 0 or pos.max() >= n:
        raise ValueError(f"positive index out of range [0, {n})")
    qv = ops.mean(q, axis=1)
    positive = ops.index(qv, (np.arange(b), pos))
    gv = ops.mean(ops.reshape(encoded_video, (b, -1, encoded_video.shape[-1])), axis=1)
    gt = masked_text_mean(text)
    joint_in = ops.concat([gv, gt], axis=-1) if head.concat else ops.add(gv, gt)
    return JSCEmbeddings(qv, positive, head.psi(joint_in))
