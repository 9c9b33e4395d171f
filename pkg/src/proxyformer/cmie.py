"""Cross-modality interaction encoding between video, text and proxy queries.

All video tensors are ``[B, T, H, W, C]`` and proxy tensors ``[B, T, N, C]``.
Each spatio-temporal interaction is split into a per-frame spatial branch and
a per-location (or per-query) temporal branch; each branch keeps its own
residual and the two branch outputs are summed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import TextFeatures
from .numerics import AttentionConfig, Module, MultiHeadAttention, Parameter, Tensor, ops


@dataclass
class PositionalEncoding:
    spatial: np.ndarray  # [H, W, C]
    temporal: np.ndarray  # [T, C]

    @classmethod
    def build(cls, num_frames: int, height: int, width: int, channels: int) -> "PositionalEncoding":
        return cls(sine_2d(height, width, channels), sine_1d(num_frames, channels))


def sine_1d(length: int, channels: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    half = channels // 2
    freq = 1.0 / (10000.0 ** (np.arange(half) / max(half, 1)))
    out = np.zeros((length, channels))
    out[:, 0:2 * half:2] = np.sin(pos * freq)
    out[:, 1:2 * half:2] = np.cos(pos * freq)
    return out


def sine_2d(height: int, width: int, channels: int) -> np.ndarray:
    """First half of the channels encodes the row, second half the column."""
    cy = channels // 2
    ey = sine_1d(height, cy)
    ex = sine_1d(width, channels - cy)
    return np.concatenate([np.broadcast_to(ey[:, None, :], (height, width, cy)),
                           np.broadcast_to(ex[None, :, :], (height, width, channels - cy))], axis=-1)


@dataclass
class ProxyQueries:
    q: Tensor  # [B, T, N, C]


@dataclass
class EncoderState:
    video: Tensor
    proxies: ProxyQueries
    stage: int = 0


@dataclass(frozen=True)
class CMIEConfig:
    model_dim: int = 64
    num_heads: int = 8
    num_layers: int = 4
    pool: str = "mean"  # or "max"
    v2p_reads_updated_video: bool = False
    use_p2v: bool = True

    def __post_init__(self):
        if self.pool not in ("mean", "max"):
            raise ValueError(f"pool must be 'mean' or 'max', got {self.pool!r}")


def _pool(x: Tensor, axis: int, how: str) -> Tensor:
    if how == "mean":
        return ops.mean(x, axis=axis)
    # max via a hard one-hot selection so the gradient routes to the winner
    arg = np.argmax(x.data, axis=axis)
    onehot = np.moveaxis(np.eye(x.shape[axis])[arg], -1, axis)
    return ops.sum(ops.mul(x, onehot), axis=axis)


class DecoupledAttention(Module):
    def __init__(self, rng: np.random.Generator, cfg: AttentionConfig, self_attention: bool):
        self.spatial = MultiHeadAttention(rng, cfg, self_attention=self_attention)
        self.temporal = MultiHeadAttention(rng, cfg, self_attention=self_attention)


class CMIEBlock(Module):
    def __init__(self, rng: np.random.Generator, cfg: CMIEConfig):
        att = AttentionConfig(cfg.model_dim, cfg.num_heads)
        self.video_sa = DecoupledAttention(rng, att, self_attention=True)
        self.p2v = DecoupledAttention(rng, att, self_attention=False) if cfg.use_p2v else None
        self.t2p = MultiHeadAttention(rng, att)
        self.v2p = DecoupledAttention(rng, att, self_attention=False)
        self.cfg = cfg


def _tile_pos(temporal: np.ndarray, reps: int) -> np.ndarray:
    """``[T, C]`` -> ``[reps*T, C]`` matching a ``[reps, T]`` token layout."""
    return np.tile(temporal, (reps, 1))


def video_self_attention(video: Tensor, block: DecoupledAttention, pos: PositionalEncoding) -> Tensor:
    b, t, h, w, c = video.shape
    xs = ops.reshape(video, (b * t, h * w, c))
    spos = pos.spatial.reshape(h * w, c)
    fs = ops.add(block.spatial(xs, xs, query_pos=spos, key_pos=spos), xs)
    xt = ops.reshape(ops.transpose(video, (0, 2, 3, 1, 4)), (b * h * w, t, c))
    ft = ops.add(block.temporal(xt, xt, query_pos=pos.temporal, key_pos=pos.temporal), xt)
    fs = ops.reshape(fs, (b, t, h, w, c))
    ft = ops.transpose(ops.reshape(ft, (b, h, w, t, c)), (0, 3, 1, 2, 4))
    return ops.add(fs, ft)


def proxy_to_video(video: Tensor, proxies: ProxyQueries, block: DecoupledAttention,
                   pos: PositionalEncoding, pool: str = "mean") -> Tensor:
    b, t, h, w, c = video.shape
    q = proxies.q
    if q.shape[:2] != (b, t):
        raise ValueError(f"video {video.shape} and proxies {q.shape} disagree on batch/frames")
    n = q.shape[2]
    # spatial: each frame's HW tokens against that frame's N proxies
    xs = ops.reshape(video, (b * t, h * w, c))
    spos = pos.spatial.reshape(h * w, c)
    fs = ops.add(block.spatial(xs, ops.reshape(q, (b * t, n, c)), query_pos=spos), xs)
    fs = ops.reshape(fs, (b, t, h, w, c))
    # temporal: per location, T tokens against the T frame-pooled proxies; the
    # pooled set is shared by all HW locations so they are folded into one query axis
    pooled = _pool(q, 2, pool)  # [B, T, C]
    xt = ops.reshape(ops.transpose(video, (0, 2, 3, 1, 4)), (b, h * w * t, c))
    ft = ops.add(block.temporal(xt, pooled, query_pos=_tile_pos(pos.temporal, h * w),
                                key_pos=pos.temporal), xt)
    ft = ops.transpose(ops.reshape(ft, (b, h, w, t, c)), (0, 3, 1, 2, 4))
    return ops.add(fs, ft)


def text_to_proxy(proxies: ProxyQueries, text: TextFeatures, attn: MultiHeadAttention) -> ProxyQueries:
    q = proxies.q
    b, t, n, c = q.shape
    flat = ops.reshape(q, (b, t * n, c))
    out = ops.add(attn(flat, text.features, key_mask=text.mask), flat)
    return ProxyQueries(ops.reshape(out, (b, t, n, c)))


def video_to_proxy(proxies: ProxyQueries, video: Tensor, block: DecoupledAttention,
                   pos: PositionalEncoding, pool: str = "mean") -> ProxyQueries:
    q = proxies.q
    b, t, n, c = q.shape
    if video.shape[:2] != (b, t):
        raise ValueError(f"video {video.shape} and proxies {q.shape} disagree on batch/frames")
    h, w = video.shape[2], video.shape[3]
    # spatial: each frame's N proxies against that frame's HW tokens
    qs = ops.reshape(q, (b * t, n, c))
    spos = pos.spatial.reshape(h * w, c)
    s = ops.add(block.spatial(qs, ops.reshape(video, (b * t, h * w, c)), key_pos=spos), qs)
    s = ops.reshape(s, (b, t, n, c))
    # temporal: per query index, T proxy states against T spatially pooled frames
    pooled = _pool(ops.reshape(video, (b, t, h * w, c)), 2, pool)  # [B, T, C]
    qt = ops.reshape(ops.transpose(q, (0, 2, 1, 3)), (b, n * t, c))
    tt = ops.add(block.temporal(qt, pooled, query_pos=_tile_pos(pos.temporal, n),
                                key_pos=pos.temporal), qt)
    tt = ops.transpose(ops.reshape(tt, (b, n, t, c)), (0, 2, 1, 3))
    return ProxyQueries(ops.add(s, tt))


class StateError(RuntimeError):
    pass


def cmie_forward(state: EncoderState, text: TextFeatures, block: CMIEBlock,
                 pos: PositionalEncoding, num_layers: int | None = None) -> EncoderState:
    """One encoder stage: video path first, then the proxy path.

    The proxy path's video interaction reads the stage input video unless
    ``v2p_reads_updated_video`` is set.
    """
    cfg = block.cfg
    k_max = cfg.num_layers if num_layers is None else num_layers
    if state.stage >= k_max:
        raise StateError(f"stage {state.stage} already at the last layer ({k_max})")
    prev_video, prev_q = state.video, state.proxies
    video = video_self_attention(prev_video, block.video_sa, pos)
    if block.p2v is not None:
        video = proxy_to_video(video, prev_q, block.p2v, pos, cfg.pool)
    q_tilde = text_to_proxy(prev_q, text, block.t2p)
    source = video if cfg.v2p_reads_updated_video else prev_video
    q_new = video_to_proxy(q_tilde, source, block.v2p, pos, cfg.pool)
    return EncoderState(video, q_new, state.stage + 1)


def cmie_stack(video: Tensor, proxies: ProxyQueries, text: TextFeatures, blocks: list[CMIEBlock],
               pos: PositionalEncoding) -> tuple[Tensor, ProxyQueries]:
    if len(blocks) < 1:
        raise ValueError("need at least one CMIE layer")
    state = EncoderState(video, proxies, 0)
    for block in blocks:
        state = cmie_forward(state, text, block, pos, num_layers=len(blocks))
    return state.video, state.proxies


class ProxyEmbedding(Module):
    """Initial proxies: a learned per-query embedding plus a learned per-frame embedding."""

    def __init__(self, rng: np.random.Generator, num_queries: int, width: int, max_frames: int):
        self.query = Parameter(rng.normal(0.0, 1.0, size=(num_queries, width)))
        self.frame = Parameter(rng.normal(0.0, 0.1, size=(max_frames, width)))

    def __call__(self, batch: int, num_frames: int) -> ProxyQueries:
        if num_frames > self.frame.shape[0]:
            raise ValueError(f"{num_frames} frames exceeds the {self.frame.shape[0]} frame embeddings")
        frame = ops.index(self.frame, slice(0, num_frames))
        q = ops.add(ops.reshape(frame, (1, num_frames, 1, -1)), ops.reshape(self.query, (1, 1) + self.query.shape))
        return ProxyQueries(ops.broadcast_to(q, (batch,) + q.shape[1:]))


# cost model -----------------------------------------------------------------

def attention_flops(T: int, S: int, N: int, C: int, mode: str, part: str = "score") -> int:
    """Multiply-accumulate count of one attention layer over video tokens.

    Score and mixing each cost (queries x keys x C); projections cost C^2 per
    token per matrix (q, k, v, out). ``part`` selects ``score`` (score plus
    mixing, the default), ``projection`` or ``total``.

    * ``full``: one pass over all T*S tokens:
      score = 2*C*(T*S)^2, projection = 4*T*S*C^2.
    * ``decoupled``: per-frame spatial plus per-location temporal passes:
      score = 2*C*(T*S^2 + S*T^2), projection = 2 * 4*T*S*C^2. A single
      frame needs no temporal pass, so at T = 1 both temporal terms drop and
      the count equals ``full``.
    * ``proxy``: decoupled spatial cross-attention video->proxies and
      proxies->video, N proxies standing in for the key set:
      score = 2*C*(T*S*N + T*N*S), projection = 4*T*S*C^2 + 4*T*N*C^2.
    """
    for name, v in (("T", T), ("S", S), ("N", N), ("C", C)):
        if int(v) < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    T, S, N, C = int(T), int(S), int(N), int(C)
    if mode == "full":
        score, proj = 2 * C * (T * S) ** 2, 4 * T * S * C * C
    elif mode == "decoupled":
        passes = 2 if T > 1 else 1
        score = 2 * C * (T * S * S + (S * T * T if T > 1 else 0))
        proj = passes * 4 * T * S * C * C
    elif mode == "proxy":
        score, proj = 2 * C * (2 * T * S * N), 4 * T * S * C * C + 4 * T * N * C * C
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if part == "score":
        return score
    if part == "projection":
        return proj
    if part == "total":
        return score + proj
    raise ValueError(f"unknown part {part!r}")
