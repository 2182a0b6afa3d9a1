"""Central-difference gradient checking."""

from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np

from .tensor import Tensor, branch_trace, check_mode, no_grad

log = logging.getLogger(__name__)


def _same_branches(t1: list, t2: list) -> bool:
    return len(t1) == len(t2) and all(np.array_equal(a, b) for a, b in zip(t1, t2))


def grad_check(
    function: Callable[[Tensor], Tensor],
    point,
    epsilon: float = 1e-6,
    max_coords: Optional[int] = None,
    seed: int = 0,
    skip_kinks: bool = False,
) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``function`` maps a tensor to a scalar tensor. Evaluation happens in
    float64. The error at each coordinate is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.

    ``max_coords`` limits the check to a seeded random subset of coordinates.
    With ``skip_kinks`` a coordinate only counts when every relu/abs/max-pool
    takes the same branch at x - eps, x and x + eps; otherwise the stencil
    straddles a kink and another coordinate is drawn in its place.
    """
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    with check_mode():
        x = Tensor(x0, requires_grad=True)
        with branch_trace() as base_trace:
            loss = function(x)
        loss.backward()
        analytic = np.asarray(x.grad, dtype=np.float64)

        coords = list(np.ndindex(*x0.shape)) if x0.ndim else [()]
        if max_coords is not None:
            order = np.random.default_rng(seed).permutation(len(coords))
            coords = [coords[i] for i in order]
        budget = len(coords) if max_coords is None else max_coords

        worst, checked, skipped = 0.0, 0, 0
        with no_grad():
            for idx in coords:
                if checked >= budget:
                    break
                xp = x0.copy()
                xp[idx] += epsilon
                xm = x0.copy()
                xm[idx] -= epsilon
                with branch_trace() as tp:
                    fp = function(Tensor(xp)).item()
                with branch_trace() as tm:
                    fm = function(Tensor(xm)).item()
                if skip_kinks and not (_same_branches(tp, base_trace) and _same_branches(tm, base_trace)):
                    skipped += 1
                    continue
                numeric = (fp - fm) / (2 * epsilon)
                a = float(analytic[idx])
                err = np.abs(a - numeric) / max(1e-8, np.abs(a) + np.abs(numeric))
                worst = max(worst, float(err))
                checked += 1
    if skipped:
        log.debug("grad_check skipped %d coordinates straddling a kink", skipped)
    return worst
