"""Finite-difference check of the full objective on a tiny synthetic instance."""

from __future__ import annotations

import math

import numpy as np

from .config import RunConfig
from .model import ProxyFormerNet
from .numerics import GradCheckReport, finite_diff_check
from .synthdata import generate_scene, render
from .training import batch_arrays, compute_objective

MAX_FRAMES = 2
MAX_TOKENS = 16
MAX_DIM = 16


class DimensionCapError(ValueError):
    """The requested instance is too large to difference exhaustively."""


def tiny_dims(cfg: RunConfig) -> tuple[int, int, int]:
    """``(T, H*W, C)`` of the stride-16 token grid the encoder would see."""
    side = math.ceil(cfg.data.canvas / 16)
    return cfg.data.num_frames, side * side, cfg.model.model_dim


def check_caps(cfg: RunConfig) -> None:
    t, hw, c = tiny_dims(cfg)
    problems = []
    if t > MAX_FRAMES:
        problems.append(f"data.num_frames={t} > {MAX_FRAMES}")
    if hw > MAX_TOKENS:
        problems.append(f"token grid H*W={hw} (data.canvas={cfg.data.canvas}) > {MAX_TOKENS}")
    if c > MAX_DIM:
        problems.append(f"model.model_dim={c} > {MAX_DIM}")
    if problems:
        raise DimensionCapError("gradient check refused: " + "; ".join(problems))


def perturb(net: ProxyFormerNet, rng: np.random.Generator, scale: float = 0.2) -> None:
    # zero-initialised projections would leave whole branches without gradient signal
    for p in net.parameters():
        if not np.any(p.data):
            p.data = rng.normal(0.0, scale, size=p.shape)


def gradient_suite(cfg: RunConfig, step: float = 1e-5, tol: float = 1e-3,
                   max_entries: int | None = None) -> GradCheckReport:
    """Check every parameter of the network through the total training objective."""
    check_caps(cfg)
    seed = cfg.train.seed
    rng = np.random.default_rng([seed, 7])
    net = ProxyFormerNet(cfg.model, seed=seed)
    perturb(net, rng)
    canvas = cfg.data.canvas
    samples = [render(generate_scene(seed * 1000 + i, "easy", cfg.data.num_frames, canvas, canvas))
               for i in range(max(cfg.train.batch_size, 1))]
    frames, ids, mask, gts = batch_arrays(samples)

    def f():
        out = net(frames, ids, mask)
        return compute_objective(out, gts, cfg.loss, cfg.train.jsc_normalize, net.joint).total

    return finite_diff_check(f, net.parameters(), step=step, tol=tol, max_entries=max_entries, rng=rng)
