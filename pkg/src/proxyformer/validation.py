"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np


def check_frames(frames, name: str = "frames") -> np.ndarray:
    """Return ``frames`` as float64 ``[T, H, W, 3]`` with finite values in [0, 1]."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"{name}: expected shape [T, H, W, 3], got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name}: need at least one frame")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError(f"{name}: values must lie in [0, 1]")
    return arr


def check_masks(masks, shape: tuple[int, int, int] | None = None, name: str = "masks") -> np.ndarray:
    arr = np.asarray(masks)
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected shape [T, H, W], got {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name}: shape {arr.shape} does not match frames {tuple(shape)}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name}: values must be 0 or 1")
    return arr.astype(np.uint8)


def check_expression(expr) -> str:
    if not isinstance(expr, str) or not expr.split():
        raise ValueError(f"expression must be a non-empty string, got {expr!r}")
    return expr


def check_pairs(X) -> list[tuple[np.ndarray, str]]:
    """``X`` is a sequence of ``(frames, expression)`` pairs."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise ValueError("X must be a sequence of (frames, expression) pairs")
    if len(X) == 0:
        raise ValueError("X is empty")
    out = []
    for i, item in enumerate(X):
        try:
            frames, expr = item
        except (TypeError, ValueError):
            raise ValueError(f"X[{i}]: expected a (frames, expression) pair") from None
        out.append((check_frames(frames, f"X[{i}] frames"), check_expression(expr)))
    return out


def check_targets(X: list[tuple[np.ndarray, str]], y) -> list[np.ndarray]:
    if len(y) != len(X):
        raise ValueError(f"{len(X)} inputs but {len(y)} targets")
    return [check_masks(m, f.shape[:3], f"y[{i}]") for i, ((f, _), m) in enumerate(zip(X, y))]
