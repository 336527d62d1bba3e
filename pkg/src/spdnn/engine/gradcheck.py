"""Finite-difference gradient checking for whole networks.

Central differences with h = 1e-5 against the analytic backward pass, in
float64.  Above a parameter budget the checked entries are a seeded random
subsample.  Relative error uses max(|analytic|, |numeric|, 1e-8) in the
denominator so zero gradients do not blow up; when both sides fall below
that floor they are numerically zero and count as matching (a conv bias
followed by batch norm has an identically zero gradient, and the difference
quotient on it is pure rounding noise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .network import run_backward, run_forward

ZERO_FLOOR = 1e-8


@dataclass
class GradCheckEntry:
    key: str
    max_rel_err: float
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)


def _loss(spec, store, x, target):
    pred, _ = run_forward(spec, store, x, mode="train", update_running=False)
    loss, _ = ops.bce_loss(pred, target)
    return loss


def grad_check(spec, store, x, target, tolerance=1e-4, step=1e-5,
               max_params=10000, seed=0) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    The store must hold float64 tensors.  Returns a report with the maximum
    relative error per parameter tensor; failures are entries, not errors.
    """
    if store.dtype != np.float64:
        raise ops.EngineError("gradient checking requires a float64 store")
    x = x.astype(np.float64, copy=False)
    target = target.astype(np.float64, copy=False)

    pred, caches = run_forward(spec, store, x, mode="train", update_running=False)
    _, dpred = ops.bce_loss(pred, target)
    grads = run_backward(spec, store, caches, dpred)

    total = sum(p.size for p in store.params.values())
    ratio = min(1.0, max_params / total) if total else 1.0
    rng = np.random.default_rng(seed)

    entries = []
    for key in store.params:
        p = store.params[key]
        g = grads[key]
        flat_idx = np.arange(p.size)
        if ratio < 1.0:
            n = max(1, int(round(p.size * ratio)))
            flat_idx = np.sort(rng.choice(p.size, size=n, replace=False))
        worst = 0.0
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in flat_idx:
            orig = flat_p[i]
            flat_p[i] = orig + step
            hi = _loss(spec, store, x, target)
            flat_p[i] = orig - step
            lo = _loss(spec, store, x, target)
            flat_p[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            analytic = flat_g[i]
            if max(abs(analytic), abs(numeric)) <= ZERO_FLOOR:
                continue
            denom = max(abs(analytic), abs(numeric), ZERO_FLOOR)
            worst = max(worst, abs(analytic - numeric) / denom)
        entries.append(GradCheckEntry(
            key=key, max_rel_err=worst, checked=len(flat_idx), passed=worst <= tolerance,
        ))
    return GradCheckReport(entries=entries, tolerance=tolerance)
