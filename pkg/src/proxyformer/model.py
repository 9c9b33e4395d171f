"""The assembled network: backbones, CMIE stack, decoder and heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .backbone import (FeaturePyramid, TextEncoder, TextFeatures, VisualBackbone, default_vocabulary,
                       encode_text, encode_video)
from .cmie import CMIEBlock, CMIEConfig, PositionalEncoding, ProxyEmbedding, ProxyQueries, cmie_stack
from .heads import (FPNDecoder, JointEmbedding, PredictionSet, ReferenceHead, SegFeatures, fpn_decode,
                    predict_masks, reference_head)
from .numerics import MLP, LayerNorm, Module, Tensor


@dataclass(frozen=True)
class ModelConfig:
    model_dim: int = 64
    num_layers: int = 4
    num_queries: int = 5
    num_heads: int = 8
    seg_dim: int = 8
    max_frames: int = 16
    pool: str = "mean"
    use_p2v: bool = True
    v2p_reads_updated_video: bool = False
    jsc_concat: bool = True

    def __post_init__(self):
        for name in ("model_dim", "num_layers", "num_queries", "num_heads", "seg_dim", "max_frames"):
            if getattr(self, name) < 1:
                raise ValueError(f"model.{name} must be >= 1")
        if self.model_dim % self.num_heads:
            raise ValueError("model.model_dim must be divisible by model.num_heads")
        if self.model_dim % 4:
            raise ValueError("model.model_dim must be divisible by 4")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def cmie(self) -> CMIEConfig:
        return CMIEConfig(self.model_dim, self.num_heads, self.num_layers, self.pool,
                          self.v2p_reads_updated_video, self.use_p2v)


@dataclass
class ModelOutput:
    predictions: PredictionSet
    queries: ProxyQueries  # normalised Q^K
    video: Tensor  # normalised F_v^K
    text: TextFeatures
    seg: SegFeatures
    pyramid: FeaturePyramid


class ProxyFormerNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, vocab_size: int | None = None):
        rng = np.random.default_rng(seed)
        c = cfg.model_dim
        vocab_size = vocab_size or len(default_vocabulary())
        self.backbone = VisualBackbone(rng, c)
        self.text = TextEncoder(rng, vocab_size, c)
        self.proxy = ProxyEmbedding(rng, cfg.num_queries, c, cfg.max_frames)
        self.cmie = [CMIEBlock(rng, cfg.cmie) for _ in range(cfg.num_layers)]
        self.video_norm = LayerNorm(c)
        self.proxy_norm = LayerNorm(c)
        self.fpn = FPNDecoder(rng, self.backbone.channels, max(c // 2, cfg.seg_dim), cfg.seg_dim)
        self.kernel = MLP(rng, [c, c, cfg.seg_dim])
        self.reference = ReferenceHead(rng, c)
        self.joint = JointEmbedding(rng, c, concat=cfg.jsc_concat)
        self.cfg = cfg
        self.bind_names()

    def __call__(self, frames, token_ids, text_mask=None) -> ModelOutput:
        return self.forward(frames, token_ids, text_mask)

    def forward(self, frames, token_ids, text_mask=None) -> ModelOutput:
        """``frames`` ``[B, T, H0, W0, 3]``; ``token_ids`` padded ``[B, L]``."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 4:
            frames = frames[None]
        b, t, h0, w0, _ = frames.shape
        pyramid = encode_video(frames, self.backbone)
        text = encode_text(token_ids, self.text, text_mask)
        if text.features.shape[0] != b:
            raise ValueError(f"{b} videos but {text.features.shape[0]} expressions")
        fv = pyramid.encoder_input
        _, _, h, w, c = fv.shape
        pos = PositionalEncoding.build(t, h, w, c)
        proxies = self.proxy(b, t)
        video, q = cmie_stack(fv, proxies, text, self.cmie, pos)
        video = self.video_norm(video)
        q = ProxyQueries(self.proxy_norm(q.q))
        seg = fpn_decode(pyramid, video, self.fpn)
        hp, wp = 4 * seg.f.shape[2], 4 * seg.f.shape[3]
        masks = predict_masks(seg, q, self.kernel, hp, wp)
        if (hp, wp) != (h0, w0):
            masks = masks[:, :, :, :h0, :w0]
        logits, boxes = reference_head(q, self.reference)
        return ModelOutput(PredictionSet(masks, logits, boxes), q, video, text, seg, pyramid)
