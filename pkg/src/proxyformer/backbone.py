"""Toy visual and linguistic encoders for the synthetic task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Conv2d, Module, Parameter, Tensor, ops

PAD, UNK = "<pad>", "<unk>"
MAX_EXPRESSION_LENGTH = 16
STRIDES = (4, 8, 16)


class Vocabulary:
    """Closed word list; index 0 is padding and index 1 the unknown word."""

    def __init__(self, words):
        self.itos: list[str] = [PAD, UNK]
        for w in words:
            if w in (PAD, UNK):
                raise ValueError(f"{w!r} is reserved")
            if w not in self.itos:
                self.itos.append(w)
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    pad_index = 0
    unk_index = 1

    def __len__(self) -> int:
        return len(self.itos)

    def __getitem__(self, word: str) -> int:
        return self.stoi.get(word, self.unk_index)


def default_vocabulary() -> Vocabulary:
    from .synthdata import COLORS, DIRECTIONS, SHAPES
    return Vocabulary(["the", "moving", *COLORS, *SHAPES, *DIRECTIONS])


def tokenize(expression: str, vocab: Vocabulary, max_length: int = MAX_EXPRESSION_LENGTH) -> list[int]:
    words = expression.lower().split()
    if not words:
        raise ValueError("empty expression")
    return [vocab[w] for w in words[:max_length]]


def pad_tokens(batch: list[list[int]], pad_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad token lists into ``[B, L]`` ids and a validity mask."""
    length = max(len(t) for t in batch)
    ids = np.full((len(batch), length), pad_index, dtype=np.int64)
    mask = np.zeros((len(batch), length), dtype=bool)
    for i, t in enumerate(batch):
        ids[i, :len(t)] = t
        mask[i, :len(t)] = True
    return ids, mask


@dataclass
class FeaturePyramid:
    levels: list[Tensor]  # [B, T, H0/s, W0/s, C_s] for s in STRIDES

    @property
    def encoder_input(self) -> Tensor:
        return self.levels[-1]


@dataclass
class TextFeatures:
    features: Tensor  # [B, L, C]
    token_ids: np.ndarray  # [B, L]
    mask: np.ndarray  # [B, L], True for real tokens


def pad_to_multiple(frames: np.ndarray, multiple: int = 16) -> np.ndarray:
    """Reflect-pad the two spatial axes of ``[..., H, W, 3]`` up to ``multiple``."""
    h, w = frames.shape[-3], frames.shape[-2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not ph and not pw:
        return frames
    pad = [(0, 0)] * (frames.ndim - 3) + [(0, ph), (0, pw), (0, 0)]
    return np.pad(frames, pad, mode="reflect")


class VisualBackbone(Module):
    """Stride-4 patchify, a 3x3 refinement, then two stride-2 convolutions."""

    def __init__(self, rng: np.random.Generator, width: int):
        if width % 4:
            raise ValueError(f"backbone width {width} must be divisible by 4")
        c4, c8 = width // 4, width // 2
        self.patchify = Conv2d(rng, 3, c4, kernel=4, stride=4)
        self.refine = Conv2d(rng, c4, c4, kernel=3, padding=1)
        self.down8 = Conv2d(rng, c4, c8, kernel=3, stride=2, padding=1)
        self.down16 = Conv2d(rng, c8, width, kernel=3, stride=2, padding=1)
        self.width = width

    @property
    def channels(self) -> tuple[int, int, int]:
        return self.width // 4, self.width // 2, self.width

    def __call__(self, frames) -> FeaturePyramid:
        return encode_video(frames, self)


def encode_video(frames, backbone: VisualBackbone) -> FeaturePyramid:
    """Frame-wise pyramid for ``[T, H0, W0, 3]`` or ``[B, T, H0, W0, 3]`` input in [0, 1]."""
    x = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
    if x.ndim == 4:
        x = x[None]
    if x.ndim != 5 or x.shape[-1] != 3:
        raise ValueError(f"frames must be [B, T, H0, W0, 3], got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("frames contain non-finite pixels")
    x = pad_to_multiple(x)
    b, t, h, w, _ = x.shape
    flat = Tensor(x.reshape(b * t, h, w, 3))
    f4 = ops.relu(backbone.refine(ops.relu(backbone.patchify(flat))))
    f8 = ops.relu(backbone.down8(f4))
    f16 = backbone.down16(f8)
    levels = [ops.reshape(f, (b, t) + f.shape[1:]) for f in (f4, f8, f16)]
    return FeaturePyramid(levels)


class TextEncoder(Module):
    def __init__(self, rng: np.random.Generator, vocab_size: int, width: int,
                 max_length: int = MAX_EXPRESSION_LENGTH):
        self.embedding = Parameter(rng.normal(0.0, 1.0, size=(vocab_size, width)))
        self.position = Parameter(rng.normal(0.0, 0.1, size=(max_length, width)))
        self.max_length = max_length

    def __call__(self, token_ids, mask=None) -> TextFeatures:
        return encode_text(token_ids, self, mask)


def encode_text(token_ids, encoder: TextEncoder, mask: np.ndarray | None = None) -> TextFeatures:
    """Embedding lookup plus learned positions; accepts a list of ids or a padded ``[B, L]`` array."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if mask is None:
        mask = np.ones(ids.shape, dtype=bool)
    length = ids.shape[1]
    if not 1 <= length <= encoder.max_length:
        raise ValueError(f"expression length {length} outside [1, {encoder.max_length}]")
    vocab_size = encoder.embedding.shape[0]
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise ValueError(f"token id outside vocabulary of size {vocab_size}")
    feats = ops.add(ops.index(encoder.embedding, ids), ops.index(encoder.position, slice(0, length)))
    return TextFeatures(feats, ids, np.asarray(mask, dtype=bool))
