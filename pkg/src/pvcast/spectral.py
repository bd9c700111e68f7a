"""Frequency profiling of IMFs and high/low reconstruction.

Each IMF gets a power spectral density S(k) = |X(k)|^2 over the positive
FFT bins (DC excluded).  Two scalar summaries drive the grouping:

* dominant frequency ``f_dom``: the bin with maximal power (ties resolve to
  the lowest frequency),
* frequency centroid ``f_cen``: the power-weighted mean frequency.

When the centroid falls outside +/-10% of the dominant bin the centroid is
taken as the effective dominant frequency, otherwise the bin wins; values
exactly on the 0.9/1.1 boundaries keep the bin.  An IMF whose effective
dominant frequency exceeds ``f_high`` is grouped High, equality groups Low.
S_high is the ascending-index sum of the High IMFs; S_low is the
ascending-index sum of the Low IMFs plus the residual, added last.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .emd import DecompositionResult
from .errors import ValidationError

#: default split threshold: one cycle per four hours, in Hz
DEFAULT_F_HIGH = 1.0 / (4.0 * 3600.0)


@dataclass
class Spectrum:
    """One-sided power spectrum over the positive bins m = 1..floor(N/2)."""

    freqs: np.ndarray
    psd: np.ndarray
    fs: float


@dataclass
class FrequencyProfile:
    """Spectral summary of one IMF and its assigned group."""

    index: int
    f_dom: float
    f_cen: float
    f_dominant: float
    group: str  # "high" | "low"
    zero_energy: bool = False

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "f_dom": self.f_dom,
            "f_cen": self.f_cen,
            "f_dominant": self.f_dominant,
            "group": self.group,
            "zero_energy": self.zero_energy,
        }


@dataclass
class ReconstructedSignals:
    """High/low frequency components; high + low reproduces the signal."""

    high: np.ndarray
    low: np.ndarray
    high_indices: tuple[int, ...]
    low_indices: tuple[int, ...]


def fft_psd(values: np.ndarray, fs: float) -> Spectrum:
    """Power spectral density |X(k)|^2 over bins 1..floor(N/2).

    The DC bin is excluded so that a mode's mean offset never competes with
    its oscillation; no window is applied.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or len(x) < 4:
        raise ValidationError("spectrum needs a 1-d signal of at least 4 samples")
    if fs <= 0:
        raise ValidationError("sampling frequency must be positive")
    n = len(x)
    m = n // 2
    coeffs = np.fft.rfft(x)
    psd = (coeffs.real**2 + coeffs.imag**2)[1 : m + 1]
    freqs = np.arange(1, m + 1, dtype=np.float64) * fs / n
    return Spectrum(freqs, psd, fs)


def dominant_frequency(spectrum: Spectrum) -> float:
    """Frequency of the highest-power bin; ties resolve to the lowest bin."""
    total = float(np.sum(spectrum.psd))
    if total == 0.0:
        raise ValidationError("dominant frequency is undefined for a zero-energy spectrum")
    return float(spectrum.freqs[int(np.argmax(spectrum.psd))])


def frequency_centroid(spectrum: Spectrum) -> float:
    """Power-weighted mean frequency."""
    total = float(np.sum(spectrum.psd))
    if total == 0.0:
        raise ValidationError("frequency centroid is undefined for a zero-energy spectrum")
    return float(np.sum(spectrum.freqs * spectrum.psd) / total)


def resolve_dominant(f_dom: float, f_cen: float) -> float:
    """Override the dominant bin with the centroid when they disagree by more
    than 10%; values exactly on the boundaries keep the bin."""
    if f_cen < 0.9 * f_dom or f_cen > 1.1 * f_dom:
        return f_cen
    return f_dom


def profile_imfs(
    decomp: DecompositionResult, fs: float, f_high: float = DEFAULT_F_HIGH
) -> list[FrequencyProfile]:
    """Spectral profile and group assignment for every IMF.

    A zero-energy IMF (identically zero, e.g. an exhausted ensemble stage)
    has no defined frequency; it is flagged and grouped Low, where it
    changes nothing.
    """
    if f_high <= 0:
        raise ValidationError("f_high must be positive")
    profiles = []
    for imf in decomp.imfs:
        if not np.any(imf.values):
            profiles.append(FrequencyProfile(imf.index, 0.0, 0.0, 0.0, "low", zero_energy=True))
            continue
        spec = fft_psd(imf.values, fs)
        if float(np.sum(spec.psd)) == 0.0:  # pure-DC mode: no oscillation
            profiles.append(FrequencyProfile(imf.index, 0.0, 0.0, 0.0, "low", zero_energy=True))
            continue
        f_dom = dominant_frequency(spec)
        f_cen = frequency_centroid(spec)
        f_eff = resolve_dominant(f_dom, f_cen)
        group = "high" if f_eff > f_high else "low"
        profiles.append(FrequencyProfile(imf.index, f_dom, f_cen, f_eff, group))
    return profiles


def group_imfs(profiles: list[FrequencyProfile]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split profile indices into (high, low); together they cover all IMFs."""
    high = tuple(p.index for p in profiles if p.group == "high")
    low = tuple(p.index for p in profiles if p.group == "low")
    return high, low


def reconstruct(
    decomp: DecompositionResult, high_indices: tuple[int, ...], low_indices: tuple[int, ...]
) -> ReconstructedSignals:
    """Sum each group in ascending IMF index order; the residual joins the
    low component last.  Summation order is fixed so reruns are bitwise
    reproducible."""
    seen = sorted((*high_indices, *low_indices))
    if seen != [imf.index for imf in decomp.imfs]:
        raise ValidationError("high/low indices must cover every IMF exactly once")
    by_index = {imf.index: imf.values for imf in decomp.imfs}
    high = np.zeros_like(decomp.residual)
    for i in sorted(high_indices):
        high = high + by_index[i]
    low = np.zeros_like(decomp.residual)
    for i in sorted(low_indices):
        low = low + by_index[i]
    low = low + decomp.residual
    return ReconstructedSignals(high, low, tuple(sorted(high_indices)), tuple(sorted(low_indices)))


def split_signal(
    decomp: DecompositionResult, fs: float, f_high: float = DEFAULT_F_HIGH
) -> tuple[ReconstructedSignals, list[FrequencyProfile]]:
    """Profile, group, and reconstruct in one call."""
    profiles = profile_imfs(decomp, fs, f_high)
    high_idx, low_idx = group_imfs(profiles)
    return reconstruct(decomp, high_idx, low_idx), profiles


def write_profiles_json(
    profiles: list[FrequencyProfile], path: str, f_high: float, config_hash: str | None = None
) -> None:
    payload = {
        "f_high": f_high,
        "profiles": [p.to_dict() for p in profiles],
    }
    if config_hash:
        payload["config_hash"] = config_hash
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
