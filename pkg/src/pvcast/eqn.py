"""Evidential quantile head and the width-constrained training objective.

The head maps fused features to Q quantiles (physical power units, via the
training-set target scale) and Q nonnegative evidence values.  Uncertainty
splits into an epistemic part from inverse evidence and an aleatoric part
from the outer quantile range.  The loss adds a pinball term, an evidence
regularizer, and a hinge penalty on interval widths above thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError
from .nets.layers import Linear, Module
from .nets.tensor import Tensor

DEFAULT_LEVELS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)


@dataclass(frozen=True)
class QuantileLevels:
    """Strictly increasing levels in (0, 1); the median must be present."""

    taus: tuple[float, ...] = DEFAULT_LEVELS

    def __post_init__(self) -> None:
        taus = tuple(float(t) for t in self.taus)
        object.__setattr__(self, "taus", taus)
        if len(taus) < 1:
            raise ValidationError("at least one quantile level required")
        if any(not 0.0 < t < 1.0 for t in taus):
            raise ValidationError(f"levels must lie strictly inside (0, 1): {taus}")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValidationError(f"levels must be strictly increasing: {taus}")
        if not any(abs(t - 0.5) <= 1e-12 for t in taus):
            raise ValidationError("levels must include the median 0.5")

    def __len__(self) -> int:
        return len(self.taus)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.taus)

    def index_of(self, tau: float) -> int:
        for i, t in enumerate(self.taus):
            if abs(t - tau) <= 1e-9:
                return i
        raise ValidationError(f"level {tau} not among configured levels {self.taus}")

    @property
    def median_index(self) -> int:
        return self.index_of(0.5)


@dataclass
class EqnOutput:
    """Per-sample quantiles (power units), evidence, and alpha = evidence+1."""

    quantiles: Tensor  # (B, Q), non-decreasing along the level axis
    evidence: Tensor  # (B, Q), >= 0
    alpha: Tensor  # (B, Q)


@dataclass
class UncertaintyEstimate:
    epistemic: np.ndarray  # (B,), > 0
    aleatoric: np.ndarray  # (B,), >= 0 in power units


def _span(a: np.ndarray) -> str:
    finite = a[np.isfinite(a)]
    bad = a.size - finite.size
    if finite.size == 0:
        return f"(all {bad} values non-finite)"
    return f"[{finite.min():.3g}, {finite.max():.3g}] with {bad} non-finite"


class EqnHead(Module):
    """Shared hidden layer feeding a quantile head and an evidence head.

    Quantiles are predicted in normalized space and rescaled by the
    training-target mean/std (kept as buffers so checkpoints carry them),
    then repaired to be non-decreasing by an in-graph per-sample sort.
    """

    def __init__(
        self,
        in_dim: int = 64,
        hidden: int = 128,
        levels: QuantileLevels | None = None,
        rng: np.random.Generator | None = None,
        pv_mean: float = 0.0,
        pv_std: float = 1.0,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.levels = levels or QuantileLevels()
        if pv_std <= 0:
            raise ValidationError(f"target std must be positive, got {pv_std}")
        q = len(self.levels)
        self.shared = Linear(in_dim, hidden, rng)
        self.q_head = Linear(hidden, q, rng)
        self.e_head = Linear(hidden, q, rng)
        self.register_buffer("pv_mean", np.array([pv_mean]))
        self.register_buffer("pv_std", np.array([pv_std]))

    def __call__(self, features: Tensor) -> EqnOutput:
        h = self.shared(features).relu()
        q_norm = self.q_head(h)
        evidence = self.e_head(h).softplus()
        quantiles = (q_norm * float(self.pv_std[0]) + float(self.pv_mean[0])).sort_last()
        if not np.isfinite(quantiles.data).all() or not np.isfinite(evidence.data).all():
            raise NumericError(
                "non-finite head activations: "
                f"quantiles {_span(quantiles.data)}, evidence {_span(evidence.data)}"
            )
        return EqnOutput(quantiles=quantiles, evidence=evidence, alpha=evidence + 1.0)


def epistemic(evidence: np.ndarray, eps_stab: float = 1e-6) -> np.ndarray:
    """Inverse of per-sample mean evidence: u = 1/(mean_j e_ij + eps)."""
    if eps_stab <= 0:
        raise ValidationError("stabilizer must be positive")
    e = np.asarray(evidence, dtype=np.float64)
    return 1.0 / (e.mean(axis=-1) + eps_stab)


def epistemic_per_level(evidence: np.ndarray, eps_stab: float = 1e-6) -> np.ndarray:
    """Per-level variant: u_ij = 1/(e_ij + eps)."""
    if eps_stab <= 0:
        raise ValidationError("stabilizer must be positive")
    return 1.0 / (np.asarray(evidence, dtype=np.float64) + eps_stab)


def aleatoric(quantiles: np.ndarray, levels: QuantileLevels, tail: float | None = None) -> np.ndarray:
    """Outer quantile range per sample; ``tail`` picks (tail, 1-tail) levels."""
    q = np.asarray(quantiles, dtype=np.float64)
    if tail is None:
        lo, hi = 0, len(levels) - 1
    else:
        lo, hi = levels.index_of(tail), levels.index_of(1.0 - tail)
    return q[:, hi] - q[:, lo]


def uncertainty(out: EqnOutput, levels: QuantileLevels, eps_stab: float = 1e-6) -> UncertaintyEstimate:
    return UncertaintyEstimate(
        epistemic=epistemic(out.evidence.data, eps_stab),
        aleatoric=aleatoric(out.quantiles.data, levels),
    )


def pinball_loss(y: Tensor, quantiles: Tensor, levels: QuantileLevels) -> Tensor:
    """Mean over samples of the summed per-level check loss.

    rho_tau(u) = tau*u for u >= 0 and (tau-1)*u otherwise, evaluated as an
    elementwise maximum of the two branches.
    """
    batch, q = quantiles.shape
    if y.data.shape not in ((batch,), (batch, 1)):
        raise ValidationError(f"target shape {y.data.shape} does not match batch {batch}")
    taus = Tensor(levels.values.reshape(1, q))
    u = y.reshape(batch, 1) - quantiles
    rho = (taus * u).maximum((taus - 1.0) * u)
    return rho.sum(axis=1).mean()


def evidence_loss(evidence: Tensor) -> Tensor:
    """Mean over samples of the summed per-level evidence."""
    return evidence.sum(axis=1).mean()


@dataclass(frozen=True)
class IntervalSpec:
    """One central interval: its two levels, weight, and width threshold."""

    lower: float
    upper: float
    weight: float
    threshold: float

    def __post_init__(self) -> None:
        if self.lower >= self.upper:
            raise ValidationError(f"interval ({self.lower}, {self.upper}) is not ordered")
        if self.weight < 0:
            raise ValidationError("interval weight must be nonnegative")
        if self.threshold < 0:
            raise ValidationError(f"width threshold must be nonnegative, got {self.threshold}")


@dataclass(frozen=True)
class WidthSpec:
    intervals: tuple[IntervalSpec, ...]

    def __post_init__(self) -> None:
        if not self.intervals:
            raise ValidationError("width spec needs at least one interval")
        if sum(i.weight for i in self.intervals) <= 0:
            raise ValidationError("total interval weight must be positive")

    @property
    def total_weight(self) -> float:
        return sum(i.weight for i in self.intervals)


DEFAULT_WIDTH_COVERAGES = ((0.6, 1.0), (0.8, 1.0), (0.9, 2.0))


def width_spec_from_targets(
    y_train: np.ndarray,
    levels: QuantileLevels,
    scale: float = 2.0,
    coverages: tuple[tuple[float, float], ...] = DEFAULT_WIDTH_COVERAGES,
) -> WidthSpec:
    """Thresholds from the training targets: scale x empirical central width.

    Each (coverage, weight) pair maps to the levels ((1-c)/2, 1-(1-c)/2),
    which must both be configured.
    """
    if scale < 0:
        raise ValidationError("threshold scale must be nonnegative")
    y = np.asarray(y_train, dtype=np.float64)
    intervals = []
    for coverage, weight in coverages:
        half_tail = (1.0 - coverage) / 2.0
        # snap to the configured levels so the spec stores canonical values
        lower = levels.taus[levels.index_of(half_tail)]
        upper = levels.taus[levels.index_of(1.0 - half_tail)]
        width = float(np.quantile(y, upper) - np.quantile(y, lower))
        intervals.append(IntervalSpec(lower, upper, weight, scale * width))
    return WidthSpec(tuple(intervals))


def width_loss(quantiles: Tensor, levels: QuantileLevels, spec: WidthSpec) -> Tensor:
    """Weighted mean hinge on interval widths: (1/W) sum_k w_k mean_i max(dq - theta, 0)."""
    total = Tensor(np.zeros(()))
    for iv in spec.intervals:
        lo, hi = levels.index_of(iv.lower), levels.index_of(iv.upper)
        width = quantiles[:, hi] - quantiles[:, lo]
        total = total + (width - iv.threshold).relu().mean() * iv.weight
    return total * (1.0 / spec.total_weight)


@dataclass(frozen=True)
class LossWeights:
    lam_quantile: float = 1.0
    lam_evidence: float = 0.01
    lam_width: float = 0.5

    def __post_init__(self) -> None:
        if min(self.lam_quantile, self.lam_evidence, self.lam_width) < 0:
            raise ValidationError("loss weights must be nonnegative")


@dataclass
class LossParts:
    pinball: float
    evidence: float
    width: float
    total: float

    def to_dict(self) -> dict:
        return {"pinball": self.pinball, "evidence": self.evidence, "width": self.width, "total": self.total}


def total_loss(
    y: Tensor,
    out: EqnOutput,
    levels: QuantileLevels,
    weights: LossWeights,
    width: WidthSpec | None = None,
) -> tuple[Tensor, LossParts]:
    """lam1*pinball + lam2*evidence + lam3*width; lam3=0 skips the width term."""
    l_q = pinball_loss(y, out.quantiles, levels)
    l_e = evidence_loss(out.evidence)
    total = l_q * weights.lam_quantile + l_e * weights.lam_evidence
    l_w_val = 0.0
    if weights.lam_width > 0:
        if width is None:
            raise ValidationError("a width spec is required when the width weight is positive")
        l_w = width_loss(out.quantiles, levels, width)
        total = total + l_w * weights.lam_width
        l_w_val = float(l_w.data)
    parts = LossParts(float(l_q.data), float(l_e.data), l_w_val, float(total.data))
    return total, parts
