"""Central finite-difference verification of reverse-mode gradients.

For a scalar-valued closure over named parameter tensors, perturb each
parameter entry by +/-step, difference the losses, and compare against the
accumulated analytic gradient.  The error measure is

    |g_fd - g_ad| / max(|g_fd|, |g_ad|, floor)

so near-zero gradients are compared absolutely at the ``floor`` scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_err: float = 0.0
    worst_param: str = ""
    per_param: dict[str, float] = field(default_factory=dict)
    failed_param: str = ""  # set when a gradient is missing or non-finite

    @property
    def passed(self) -> bool:
        return not self.failed_param and self.max_rel_err < self.tolerance


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-4,
    max_entries_per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must be deterministic (fix any dropout masks) and close over
    ``params``.  With ``max_entries_per_param`` set, a random subset of
    entries per parameter is probed, seeded through ``rng``.
    """
    report = GradCheckReport(tolerance=tolerance)
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            # a parameter the loss never touches has zero gradient
            analytic[name] = np.zeros_like(p.data)
            continue
        if not np.all(np.isfinite(p.grad)):
            report.failed_param = name
            report.max_rel_err = float("inf")
            return report
        analytic[name] = p.grad.copy()

    rng = rng or np.random.default_rng(0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            entries = np.sort(rng.choice(n, size=max_entries_per_param, replace=False))
        else:
            entries = np.arange(n)
        ad_flat = analytic[name].reshape(-1)
        worst = 0.0
        for j in entries:
            saved = flat[j]
            flat[j] = saved + step
            up = float(loss_fn().data)
            flat[j] = saved - step
            down = float(loss_fn().data)
            flat[j] = saved
            fd = (up - down) / (2.0 * step)
            if not np.isfinite(fd):
                report.failed_param = name
                report.max_rel_err = float("inf")
                return report
            ad = float(ad_flat[j])
            err = abs(fd - ad) / max(abs(fd), abs(ad), floor)
            worst = max(worst, err)
        report.per_param[name] = worst
        if worst > report.max_rel_err:
            report.max_rel_err = worst
            report.worst_param = name
    return report
