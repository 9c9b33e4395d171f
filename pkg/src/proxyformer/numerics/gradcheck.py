"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward, no_grad


class OracleError(RuntimeError):
    """The function under test is not deterministic."""


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    def by_prefix(self, depth: int = 1) -> dict[str, float]:
        """Worst error grouped by the first ``depth`` components of each name."""
        out: dict[str, float] = {}
        for name, err in self.errors.items():
            key = ".".join(name.split(".")[:depth])
            out[key] = max(out.get(key, 0.0), err)
        return out


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Parameter], step: float = 1e-5,
                      tol: float = 1e-4, max_entries: int | None = None,
                      rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` with central differences.

    The error per entry is ``|analytic - numeric| / max(1, |analytic|)``; the
    report keeps the maximum per parameter. ``max_entries`` optionally
    subsamples large parameters.
    """
    if not 1e-6 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-6, 1e-3]")
    for p in params:
        p.zero_grad()
    loss = f()
    base = loss.item()
    backward(loss, params)
    with no_grad():
        again = f().item()
    if again != base:
        raise OracleError(f"f is not deterministic: {base!r} vs {again!r}")
    analytic = {id(p): p.grad.copy() for p in params}

    report = GradCheckReport(tol=tol)
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            gen = rng or np.random.default_rng(0)
            entries = np.sort(gen.choice(flat.size, size=max_entries, replace=False))
        ga = analytic[id(p)].reshape(-1)
        worst = 0.0
        with no_grad():
            for j in entries:
                orig = flat[j]
                flat[j] = orig + step
                up = f().item()
                flat[j] = orig - step
                down = f().item()
                flat[j] = orig
                num = (up - down) / (2 * step)
                err = abs(ga[j] - num) / max(1.0, abs(ga[j]))
                worst = max(worst, err)
        report.errors[p.name or f"param{i}"] = worst
    return report
