"""Forecast evaluation: nMAE, nRMSE, R2, CRPS, ACE, and Winkler score.

Deterministic metrics read the median quantile; probabilistic metrics read
the interval defined by the outermost configured levels.  The CRPS is the
standard quantile decomposition, 2 x the mean pinball loss over levels, so
the two agree to machine precision by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eqn import QuantileLevels
from .errors import ValidationError


def _pair(y: np.ndarray, yhat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise ValidationError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ValidationError("no samples to evaluate")
    if not (np.isfinite(y).all() and np.isfinite(yhat).all()):
        raise ValidationError("non-finite values in evaluation inputs")
    return y, yhat


def nmae(y: np.ndarray, yhat: np.ndarray) -> float:
    """Mean absolute error over mean observation, in percent."""
    y, yhat = _pair(y, yhat)
    denom = y.mean()
    if denom <= 0:
        raise ValidationError(f"normalized error undefined: mean observation {denom} <= 0")
    return float(np.abs(y - yhat).mean() / denom * 100.0)


def nrmse(y: np.ndarray, yhat: np.ndarray) -> float:
    """Root-mean-square error over mean observation, in percent."""
    y, yhat = _pair(y, yhat)
    denom = y.mean()
    if denom <= 0:
        raise ValidationError(f"normalized error undefined: mean observation {denom} <= 0")
    return float(np.sqrt(((y - yhat) ** 2).mean()) / denom * 100.0)


def r2(y: np.ndarray, yhat: np.ndarray) -> float:
    """Proportion of variance explained: 1 - SSE/SST."""
    y, yhat = _pair(y, yhat)
    sst = ((y - y.mean()) ** 2).sum()
    if sst == 0:
        raise ValidationError("coefficient of determination undefined for constant observations")
    return float(1.0 - ((y - yhat) ** 2).sum() / sst)


def crps(quantiles: np.ndarray, y: np.ndarray, levels: QuantileLevels) -> float:
    """Quantile-decomposition estimate: 2 x mean pinball over levels & samples."""
    q = np.asarray(quantiles, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if q.ndim != 2 or q.shape != (y.size, len(levels)):
        raise ValidationError(f"quantile matrix {q.shape} does not match {y.size}x{len(levels)}")
    taus = levels.values
    u = y[:, None] - q
    rho = np.where(u >= 0, taus * u, (taus - 1.0) * u)
    # single reduction keeps the 2 x mean-pinball identity exact
    return float(2.0 * np.mean(rho))


def coverage(y: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    lower = np.asarray(lower, dtype=np.float64).reshape(-1)
    upper = np.asarray(upper, dtype=np.float64).reshape(-1)
    if not (y.shape == lower.shape == upper.shape):
        raise ValidationError("interval arrays must match the observation length")
    if (lower > upper).any():
        raise ValidationError("interval bounds out of order")
    return float(((y >= lower) & (y <= upper)).mean())


def ace(y: np.ndarray, lower: np.ndarray, upper: np.ndarray, alpha: float = 0.9) -> float:
    """Average coverage error: empirical coverage minus the preset level."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError("confidence level must be in (0, 1)")
    return coverage(y, lower, upper) - alpha


def winkler(
    y: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    alpha: float = 0.9,
    classical: bool = False,
) -> float:
    """Interval width plus an out-of-interval penalty, averaged over samples.

    The penalty divisor is the confidence level alpha as printed in the
    source formulation; ``classical=True`` divides by (1 - alpha) instead.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError("confidence level must be in (0, 1)")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    lower = np.asarray(lower, dtype=np.float64).reshape(-1)
    upper = np.asarray(upper, dtype=np.float64).reshape(-1)
    if not (y.shape == lower.shape == upper.shape):
        raise ValidationError("interval arrays must match the observation length")
    if (lower > upper).any():
        raise ValidationError("interval bounds out of order")
    width = upper - lower
    miss = np.maximum(np.maximum(lower - y, y - upper), 0.0)
    divisor = (1.0 - alpha) if classical else alpha
    return float((width + (2.0 / divisor) * miss).mean())


@dataclass
class EvalReport:
    """One evaluation row; column order mirrors the reporting convention."""

    nmae: float
    nrmse: float
    r2: float
    crps: float
    ace: float
    ws: float
    n: int
    alpha: float
    ace_abs: float

    COLUMNS = ("nMAE", "nRMSE", "R2", "CRPS", "ACE", "WS")

    def to_dict(self) -> dict:
        return {
            "nMAE": self.nmae,
            "nRMSE": self.nrmse,
            "R2": self.r2,
            "CRPS": self.crps,
            "ACE": self.ace,
            "WS": self.ws,
            "ACE_abs": self.ace_abs,
            "n": self.n,
            "alpha": self.alpha,
        }

    def to_json(self, config_hash: str | None = None) -> str:
        payload = self.to_dict()
        if config_hash is not None:
            payload["config_hash"] = config_hash
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_csv(self, config_hash: str | None = None) -> str:
        lines = []
        if config_hash is not None:
            lines.append(f"# config_hash={config_hash}")
        values = (self.nmae, self.nrmse, self.r2, self.crps, self.ace, self.ws)
        lines.append(",".join(self.COLUMNS))
        lines.append(",".join(repr(v) for v in values))
        return "\n".join(lines) + "\n"

    def write(self, directory: str | Path, config_hash: str | None = None) -> None:
        directory = Path(directory)
        (directory / "eval_report.json").write_text(self.to_json(config_hash))
        (directory / "eval_report.csv").write_text(self.to_csv(config_hash))


def evaluate_forecasts(
    y: np.ndarray,
    quantiles: np.ndarray,
    levels: QuantileLevels,
    alpha: float = 0.9,
    classical_winkler: bool = False,
) -> EvalReport:
    """Full report from observations and the quantile matrix.

    Deterministic metrics use the median column; the interval for ACE/WS is
    the central one with coverage ``alpha`` (its levels must be configured).
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    q = np.asarray(quantiles, dtype=np.float64)
    if q.shape != (y.size, len(levels)):
        raise ValidationError(f"quantile matrix {q.shape} does not match {y.size}x{len(levels)}")
    median = q[:, levels.median_index]
    half_tail = (1.0 - alpha) / 2.0
    lower = q[:, levels.index_of(half_tail)]
    upper = q[:, levels.index_of(1.0 - half_tail)]
    ace_val = ace(y, lower, upper, alpha)
    return EvalReport(
        nmae=nmae(y, median),
        nrmse=nrmse(y, median),
        r2=r2(y, median),
        crps=crps(q, y, levels),
        ace=ace_val,
        ws=winkler(y, lower, upper, alpha, classical_winkler),
        n=int(y.size),
        alpha=alpha,
        ace_abs=abs(ace_val),
    )
