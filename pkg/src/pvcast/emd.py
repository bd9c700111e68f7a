"""Empirical mode decomposition and its noise-assisted ensemble variant.

The sifting kernel extracts intrinsic mode functions (IMFs) by repeatedly
subtracting the mean of cubic-spline envelopes through the local maxima and
minima, with mirror extension of ``boundary_extrema`` extrema at each end.
Sifting stops when the Cauchy criterion

    sum((h_prev - h)^2) / sum(h_prev^2) < sd_threshold

holds and the candidate satisfies the IMF property (extrema and zero-crossing
counts differ by at most one), or after ``max_iterations`` passes.

The ensemble variant (CEEMDAN) runs ``ensemble_size`` parallel residual
chains.  At stage k, realization i extracts one IMF from its residual plus a
fresh noise draw ``noise_factor * std(x) * w``; the stage IMF is the
ensemble mean, and each chain's residual is reduced by its own extraction:

    imf_k_i = first_imf(r_i + n_k_i),   r_i <- r_i - imf_k_i.

The injected noise only ever enters mode extraction, never the residual
chain, so the averaged IMFs plus the averaged final residual telescope back
to the input at float rounding.  With ensemble_size=1 and noise_factor=0 the
schedule reduces bitwise to plain EMD.

Realizations are independent given (seed, realization, stage), so the result
does not depend on evaluation order; this implementation runs them serially.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class SiftConfig:
    """Stop rule and boundary handling for the sifting kernel."""

    max_iterations: int = 100
    sd_threshold: float = 0.2
    boundary_extrema: int = 2


@dataclass
class CeemdanConfig:
    """Ensemble schedule: ``ensemble_size`` realizations with fresh adaptive
    noise per stage, amplitude ``noise_factor * std(input)``."""

    ensemble_size: int = 50
    noise_factor: float = 0.2
    seed: int = 0
    max_modes: int = 64
    sift: SiftConfig = field(default_factory=SiftConfig)

    def to_dict(self) -> dict:
        return {
            "ensemble_size": self.ensemble_size,
            "noise_factor": self.noise_factor,
            "seed": self.seed,
            "max_modes": self.max_modes,
            "sift": {
                "max_iterations": self.sift.max_iterations,
                "sd_threshold": self.sift.sd_threshold,
                "boundary_extrema": self.sift.boundary_extrema,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CeemdanConfig":
        d = dict(d)
        sift = SiftConfig(**d.pop("sift", {}))
        return cls(sift=sift, **d)


@dataclass
class Imf:
    """One intrinsic mode function; ``index`` is 1-based extraction order."""

    values: np.ndarray
    index: int


@dataclass
class DecompositionResult:
    imfs: list[Imf]
    residual: np.ndarray
    config: dict

    @property
    def n_modes(self) -> int:
        return len(self.imfs)

    def to_matrix(self) -> np.ndarray:
        """IMFs stacked as rows, ascending index; shape (K, n)."""
        if not self.imfs:
            return np.zeros((0, len(self.residual)))
        return np.stack([imf.values for imf in self.imfs])

    def summed(self) -> np.ndarray:
        """Ascending-index sum of the IMFs plus the residual."""
        total = np.zeros_like(self.residual)
        for imf in self.imfs:
            total = total + imf.values
        return total + self.residual


# ---------------------------------------------------------------------------
# Extrema, zero crossings, envelopes
# ---------------------------------------------------------------------------


def _find_extrema(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of local maxima and minima; a flat run counts once, at its
    midpoint."""
    d = np.diff(x)
    nz = np.flatnonzero(d != 0.0)
    if nz.size < 2:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    s = np.sign(d[nz])
    turns = np.flatnonzero(s[:-1] != s[1:])
    if turns.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    left = nz[turns]
    right = nz[turns + 1]
    pos = (left + 1 + right) // 2
    rising = s[turns] > 0
    return pos[rising], pos[~rising]


def _zero_crossings(x: np.ndarray) -> int:
    nz = x[x != 0.0]
    if nz.size < 2:
        return 0
    return int(np.sum(nz[:-1] * nz[1:] < 0.0))


def _mirror_side(
    x: np.ndarray, max_idx: np.ndarray, min_idx: np.ndarray, nbsym: int, left: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mirror up to ``nbsym`` extrema of each kind beyond one boundary.

    The mirror axis is the first (last) extremum unless the endpoint value
    lies outside the envelope there, in which case the endpoint itself
    becomes a knot and the axis.  Returns mirrored (positions, values) for
    the maxima and minima on that side.
    """
    end = len(x) - 1
    if left:
        if max_idx[0] < min_idx[0]:
            if x[0] > x[min_idx[0]]:
                ma = max_idx[1 : nbsym + 1][::-1]
                mi = min_idx[:nbsym][::-1]
                sym = max_idx[0]
            else:
                ma = max_idx[:nbsym][::-1]
                mi = np.concatenate((min_idx[: nbsym - 1][::-1], [0]))
                sym = 0
        else:
            if x[0] < x[max_idx[0]]:
                ma = max_idx[:nbsym][::-1]
                mi = min_idx[1 : nbsym + 1][::-1]
                sym = min_idx[0]
            else:
                ma = np.concatenate((max_idx[: nbsym - 1][::-1], [0]))
                mi = min_idx[:nbsym][::-1]
                sym = 0
        pos_ma, pos_mi = 2 * sym - ma, 2 * sym - mi
        if (pos_ma.size and pos_ma.min() > 0) or (pos_mi.size and pos_mi.min() > 0):
            # mirrored knots do not reach the boundary: re-mirror about it
            ma = max_idx[:nbsym][::-1]
            mi = min_idx[:nbsym][::-1]
            pos_ma, pos_mi = -ma, -mi
    else:
        if max_idx[-1] < min_idx[-1]:
            if x[-1] > x[min_idx[-1]]:
                ma = np.concatenate(([end], max_idx[-(nbsym - 1) :][::-1] if nbsym > 1 else []))
                mi = min_idx[-nbsym:][::-1]
                sym = end
            else:
                ma = max_idx[-nbsym:][::-1]
                mi = min_idx[-nbsym - 1 : -1][::-1]
                sym = min_idx[-1]
        else:
            if x[-1] < x[max_idx[-1]]:
                ma = max_idx[-nbsym - 1 : -1][::-1]
                mi = min_idx[-nbsym:][::-1]
                sym = max_idx[-1]
            else:
                ma = max_idx[-nbsym:][::-1]
                mi = np.concatenate(([end], min_idx[-(nbsym - 1) :][::-1] if nbsym > 1 else []))
                sym = end
        pos_ma, pos_mi = 2 * sym - ma, 2 * sym - mi
        if (pos_ma.size and pos_ma.max() < end) or (pos_mi.size and pos_mi.max() < end):
            ma = max_idx[-nbsym:][::-1]
            mi = min_idx[-nbsym:][::-1]
            pos_ma, pos_mi = 2 * end - ma, 2 * end - mi
    ma = np.asarray(ma, dtype=np.int64)
    mi = np.asarray(mi, dtype=np.int64)
    return pos_ma, x[ma], pos_mi, x[mi]


def _spline(knot_pos: np.ndarray, knot_val: np.ndarray, n: int) -> np.ndarray:
    order = np.argsort(knot_pos, kind="stable")
    pos, val = knot_pos[order].astype(np.float64), knot_val[order]
    keep = np.concatenate(([True], np.diff(pos) > 0))
    pos, val = pos[keep], val[keep]
    grid = np.arange(n, dtype=np.float64)
    if pos.size < 4:
        return np.interp(grid, pos, val)
    return CubicSpline(pos, val)(grid)


def _envelopes(
    x: np.ndarray, max_idx: np.ndarray, min_idx: np.ndarray, nbsym: int
) -> tuple[np.ndarray, np.ndarray]:
    n = len(x)
    lmax_p, lmax_v, lmin_p, lmin_v = _mirror_side(x, max_idx, min_idx, nbsym, left=True)
    rmax_p, rmax_v, rmin_p, rmin_v = _mirror_side(x, max_idx, min_idx, nbsym, left=False)
    upper = _spline(
        np.concatenate((lmax_p, max_idx, rmax_p)),
        np.concatenate((lmax_v, x[max_idx], rmax_v)),
        n,
    )
    lower = _spline(
        np.concatenate((lmin_p, min_idx, rmin_p)),
        np.concatenate((lmin_v, x[min_idx], rmin_v)),
        n,
    )
    return upper, lower


# ---------------------------------------------------------------------------
# Sifting
# ---------------------------------------------------------------------------


def decomposable(signal: np.ndarray) -> bool:
    """True when the signal has at least two maxima and two minima."""
    x = np.asarray(signal, dtype=np.float64)
    if len(x) < 4:
        return False
    max_idx, min_idx = _find_extrema(x)
    return len(max_idx) >= 2 and len(min_idx) >= 2


def _imf_property(h: np.ndarray) -> bool:
    max_idx, min_idx = _find_extrema(h)
    n_ext = len(max_idx) + len(min_idx)
    return abs(n_ext - _zero_crossings(h)) <= 1


def _extract_imf(signal: np.ndarray, config: SiftConfig) -> np.ndarray:
    """Run the sifting loop once, returning the extracted IMF."""
    h = np.asarray(signal, dtype=np.float64).copy()
    for _ in range(config.max_iterations):
        max_idx, min_idx = _find_extrema(h)
        if len(max_idx) < 2 or len(min_idx) < 2:
            break
        upper, lower = _envelopes(h, max_idx, min_idx, config.boundary_extrema)
        h_next = h - 0.5 * (upper + lower)
        denom = float(np.sum(h * h))
        if denom == 0.0:
            h = h_next
            break
        sd = float(np.sum((h - h_next) ** 2)) / denom
        h = h_next
        if sd < config.sd_threshold and _imf_property(h):
            break
    return h


def sift(
    signal: np.ndarray, config: Optional[SiftConfig] = None
) -> tuple[Optional[np.ndarray], np.ndarray]:
    """Extract one IMF; returns (imf, remainder).

    A signal with fewer than two maxima or two minima is not decomposable:
    (None, signal copy) is returned and the caller treats the input as the
    final residual.
    """
    x = np.asarray(signal, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("sift input must be finite")
    if not decomposable(x):
        return None, x.copy()
    imf = _extract_imf(x, config or SiftConfig())
    return imf, x - imf


# ---------------------------------------------------------------------------
# Plain EMD
# ---------------------------------------------------------------------------


def emd(
    signal: np.ndarray,
    config: Optional[SiftConfig] = None,
    max_modes: int = 64,
) -> DecompositionResult:
    """Decompose a signal into IMFs plus a residual by repeated sifting.

    A constant or all-zero signal yields an empty decomposition whose
    residual is the signal itself.
    """
    x = np.asarray(signal, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("emd input must be finite")
    cfg = config or SiftConfig()
    residual = x.copy()
    modes: list[np.ndarray] = []
    while len(modes) < max_modes and decomposable(residual):
        imf = _extract_imf(residual, cfg)
        residual = residual - imf
        modes.append(imf)
    echo = {"method": "emd", "max_modes": max_modes}
    return DecompositionResult([Imf(m, i + 1) for i, m in enumerate(modes)], residual, echo)


# ---------------------------------------------------------------------------
# CEEMDAN
# ---------------------------------------------------------------------------


def adaptive_noise(
    signal: np.ndarray, realization: int, noise_factor: float, seed: int, stage: int = 1
) -> np.ndarray:
    """Gaussian noise scaled by ``noise_factor * std(signal)``.

    Deterministic per (seed, realization, stage).  ``noise_factor`` 0 yields
    exact zeros; a constant signal has zero deviation, so the draw collapses
    to zeros and a warning is logged because the ensemble degenerates.
    """
    x = np.asarray(signal, dtype=np.float64)
    if noise_factor < 0:
        raise ValidationError("noise_factor must be non-negative")
    if noise_factor == 0.0:
        return np.zeros_like(x)
    scale = noise_factor * float(x.std())
    if scale == 0.0:
        logger.warning("constant input: adaptive noise has zero amplitude")
        return np.zeros_like(x)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(realization, stage)))
    return scale * rng.standard_normal(len(x))


def ceemdan(signal: np.ndarray, config: Optional[CeemdanConfig] = None) -> DecompositionResult:
    """Ensemble decomposition with stage-wise adaptive noise.

    Each realization keeps its own residual chain; noise only enters the
    per-stage mode extraction, so summed IMFs plus residual reproduce the
    input at float rounding.  A realization whose residual stops being
    decomposable contributes zero IMFs from that stage on.  The global loop
    stops when the ensemble-mean residual is no longer decomposable or after
    ``max_modes`` stages.
    """
    cfg = config or CeemdanConfig()
    x = np.asarray(signal, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("ceemdan input must be finite")
    if cfg.ensemble_size < 1:
        raise ValidationError("ensemble_size must be at least 1")
    n_real = cfg.ensemble_size
    residuals = [x.copy() for _ in range(n_real)]
    modes: list[np.ndarray] = []
    while len(modes) < cfg.max_modes:
        mean_residual = np.mean(np.stack(residuals), axis=0)
        if not decomposable(mean_residual):
            break
        stage = len(modes) + 1
        extracted = np.zeros((n_real, len(x)))
        for i in range(n_real):
            if not decomposable(residuals[i]):
                continue  # exhausted chain: zero contribution this stage on
            if cfg.noise_factor == 0.0:
                noisy = residuals[i]
            else:
                noisy = residuals[i] + adaptive_noise(x, i, cfg.noise_factor, cfg.seed, stage)
            if not decomposable(noisy):
                continue
            imf_i = _extract_imf(noisy, cfg.sift)
            residuals[i] = residuals[i] - imf_i
            extracted[i] = imf_i
        stage_imf = np.mean(extracted, axis=0)
        if not np.any(stage_imf):
            break  # every chain exhausted
        modes.append(stage_imf)
    residual = np.mean(np.stack(residuals), axis=0)
    return DecompositionResult(
        [Imf(m, i + 1) for i, m in enumerate(modes)], residual, cfg.to_dict()
    )
