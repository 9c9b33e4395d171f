"""Parameter containers and the attention / normalisation layers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Parameter, Tensor


class Module:
    """Tree of named parameters, walked in attribute-definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def bind_names(self, prefix: str = "") -> None:
        seen = set()
        for name, p in self.named_parameters(prefix):
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, zero: bool = False):
        w = np.zeros((d_in, d_out)) if zero else xavier(rng, d_in, d_out)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, kernel: int,
                 stride: int = 1, padding: int = 0):
        fan_in = kernel * kernel * c_in
        # He-style uniform init for ReLU stacks
        bound = np.sqrt(6.0 / fan_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(kernel, kernel, c_in, c_out)) * np.sqrt(0.5))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class MLP(Module):
    def __init__(self, rng: np.random.Generator, dims: list[int]):
        self.layers = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int = 256
    num_heads: int = 8

    def __post_init__(self):
        if self.model_dim <= 0 or self.num_heads <= 0:
            raise ValueError("model_dim and num_heads must be positive")
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def multi_head_attention(query: Tensor, key: Tensor, value: Tensor, cfg: AttentionConfig,
                         params: dict[str, Tensor], key_mask: np.ndarray | None = None) -> Tensor:
    """Multi-head scaled dot-product attention on ``[B, L, C]`` inputs.

    ``params`` holds ``wq, bq, wk, bk, wv, bv, wo, bo``. ``key_mask`` is a
    ``[B, Lk]`` boolean array, True for usable keys.
    """
    if query.ndim != 3 or key.ndim != 3 or value.ndim != 3:
        raise ValueError("attention inputs must be [B, L, C]")
    b, lq, c = query.shape
    if c != cfg.model_dim or key.shape[-1] != c or value.shape[-1] != c:
        raise ValueError(f"channel mismatch: expected {cfg.model_dim}, got {query.shape}/{key.shape}/{value.shape}")
    if key.shape[:2] != value.shape[:2] or key.shape[0] != b:
        raise ValueError(f"key/value disagree: {key.shape} vs {value.shape}")
    lk = key.shape[1]
    if lk < 1:
        raise ValueError("attention needs at least one key")
    h, d = cfg.num_heads, cfg.head_dim

    def heads(t: Tensor, n: int) -> Tensor:
        return ops.transpose(ops.reshape(t, (b, n, h, d)), (0, 2, 1, 3))

    q = heads(ops.linear(query, params["wq"], params["bq"]), lq)
    k = heads(ops.linear(key, params["wk"], params["bk"]), lk)
    v = heads(ops.linear(value, params["wv"], params["bv"]), lk)
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, None, :]
    mixed = ops.scaled_dot_attention(q, k, v, mask)
    mixed = ops.reshape(ops.transpose(mixed, (0, 2, 1, 3)), (b, lq, c))
    return ops.linear(mixed, params["wo"], params["bo"])


class MultiHeadAttention(Module):
    """Pre-normalised attention block returning only the attention term.

    Queries and keys/values are layer-normalised; positional encodings, when
    given, are added to the normalised queries and keys but not the values.
    The caller adds the residual.
    """

    def __init__(self, rng: np.random.Generator, cfg: AttentionConfig, self_attention: bool = False):
        c = cfg.model_dim
        self.cfg = cfg
        self.norm_q = LayerNorm(c)
        self.norm_kv = None if self_attention else LayerNorm(c)
        self.wq = Parameter(xavier(rng, c, c))
        self.bq = Parameter(np.zeros(c))
        self.wk = Parameter(xavier(rng, c, c))
        self.bk = Parameter(np.zeros(c))
        self.wv = Parameter(xavier(rng, c, c))
        self.bv = Parameter(np.zeros(c))
        # zero output projection: every block starts as its residual
        self.wo = Parameter(np.zeros((c, c)))
        self.bo = Parameter(np.zeros(c))

    @property
    def params(self) -> dict[str, Tensor]:
        return {k: getattr(self, k) for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}

    def __call__(self, query: Tensor, kv: Tensor, query_pos=None, key_pos=None,
                 key_mask: np.ndarray | None = None) -> Tensor:
        qn = self.norm_q(query)
        kvn = qn if self.norm_kv is None and kv is query else (self.norm_kv or self.norm_q)(kv)
        qi = qn if query_pos is None else ops.add(qn, query_pos)
        ki = kvn if key_pos is None else ops.add(kvn, key_pos)
        return multi_head_attention(qi, ki, kvn, self.cfg, self.params, key_mask)
