"""Residual power spectra and spectral lower bounds on force-estimation error.

Conventions: spectra are tabulated against angular frequency omega (rad per
unit time) and normalized so that  integral S(omega) domega / (2 pi)  equals
the variance it accounts for.  hbar = 1 in program units.

The prior force spectrum may be the SYMBOLIC_INFINITE sentinel (a flat,
uninformative prior): its 1/S_f term is identically zero.  The static-force
case (a delta-spike prior) is handled through the bandwidth weight B(omega)
going to zero instead of representing the delta numerically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import signal

from .errors import BandOutOfRange, GridMismatch, TooFewSamples


class _SymbolicInfinite:
    """Sentinel for an infinitely broad (uninformative) prior spectrum."""

    def __repr__(self) -> str:
        return "SYMBOLIC_INFINITE"


SYMBOLIC_INFINITE = _SymbolicInfinite()

PsdOrInfinite = Union["Psd", _SymbolicInfinite]


@dataclass(frozen=True)
class Psd:
    """A tabulated one-variable power spectral density S(omega) >= 0."""

    frequencies: np.ndarray  # rad / unit time, strictly increasing
    values: np.ndarray

    def __post_init__(self) -> None:
        freq = np.asarray(self.frequencies, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if freq.shape != vals.shape or freq.ndim != 1:
            raise ValueError("frequencies and values must be 1D arrays of equal length")
        if len(freq) >= 2 and np.any(np.diff(freq) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(vals < 0):
            raise ValueError("PSD values must be non-negative")
        object.__setattr__(self, "frequencies", freq)
        object.__setattr__(self, "values", vals)

    def interp(self, omega: np.ndarray) -> np.ndarray:
        return np.interp(omega, self.frequencies, self.values)


def periodogram(samples: np.ndarray, dt: float, segments: int = 8) -> Psd:
    """Welch PSD of a uniformly sampled series (Hann window, half overlap).

    ``segments`` sets the number of half-overlapping segments averaged
    together.  Normalization: for white noise of variance v the one-sided
    level is 2 v dt, and  sum S(omega) domega / (2 pi)  recovers v.
    """
    samples = np.asarray(samples, dtype=float)
    if segments < 1:
        raise TooFewSamples("segments must be >= 1")
    if len(samples) < 2 * segments:
        raise TooFewSamples(f"need at least {2 * segments} samples for {segments} segments")
    nperseg = int(2 * len(samples) / (segments + 1))
    nperseg = max(2, min(nperseg, len(samples)))
    freqs, vals = signal.welch(
        samples,
        fs=1.0 / dt,
        window="hann",
        nperseg=nperseg,
        noverlap=nperseg // 2,
        detrend=False,
        scaling="density",
    )
    # scipy returns density per unit ordinary frequency; against angular
    # frequency with the 1/(2 pi) integration measure the values carry over.
    return Psd(frequencies=2.0 * np.pi * freqs, values=vals)


@dataclass(frozen=True)
class QcrbInputs:
    """Tabulated inputs for the spectral uncertainty bound.

    All Psd tabulations must share one frequency grid; ``s_f`` may be
    SYMBOLIC_INFINITE.  ``bandwidth`` is a weight function B(omega).
    """

    chi_m_sq: Psd  # |chi_m(omega)|^2
    s_fba: Psd  # backaction force spectrum
    s_z: Psd  # total force-noise spectrum
    s_f: PsdOrInfinite = SYMBOLIC_INFINITE
    bandwidth: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self) -> None:
        grids = [self.chi_m_sq.frequencies, self.s_fba.frequencies, self.s_z.frequencies]
        if not isinstance(self.s_f, _SymbolicInfinite):
            grids.append(self.s_f.frequencies)
        ref = grids[0]
        for g in grids[1:]:
            if g.shape != ref.shape or np.max(np.abs(g - ref)) > 1e-12:
                raise GridMismatch("all spectral tabulations must share one frequency grid")


def damped_oscillator_susceptibility_sq(
    omega: np.ndarray, omega0: float, gamma: float
) -> np.ndarray:
    """Convenience |chi_m(omega)|^2 = 1 / ((omega0^2 - omega^2)^2 + gamma^2 omega^2).

    A labeled default for users without a tabulated susceptibility; any
    tabulation can be supplied instead.
    """
    omega = np.asarray(omega, dtype=float)
    return 1.0 / ((omega0**2 - omega**2) ** 2 + (gamma * omega) ** 2)


def qcrb_spectral_bound(inputs: QcrbInputs, hbar: float = 1.0) -> Psd:
    """Pointwise lower bound on the error spectrum:
    (4/hbar^2 |chi_m|^2 S_fba + 1/S_f)^{-1}."""
    omega = inputs.chi_m_sq.frequencies
    denom = (4.0 / hbar**2) * inputs.chi_m_sq.values * inputs.s_fba.values
    if not isinstance(inputs.s_f, _SymbolicInfinite):
        with np.errstate(divide="ignore"):
            denom = denom + np.where(inputs.s_f.values > 0, 1.0 / inputs.s_f.values, np.inf)
    with np.errstate(divide="ignore"):
        vals = np.where(denom > 0, 1.0 / denom, np.inf)
    vals = np.where(np.isfinite(vals), vals, 0.0)  # infinite denom => zero bound
    return Psd(frequencies=omega, values=vals)


def _band_grid(psd: Psd, band: tuple) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = float(band[0]), float(band[1])
    freq = psd.frequencies
    if hi <= lo:
        raise BandOutOfRange(f"empty band [{lo}, {hi}]")
    if lo < freq[0] - 1e-12 or hi > freq[-1] + 1e-12:
        raise BandOutOfRange(
            f"band [{lo}, {hi}] exceeds tabulated range [{freq[0]}, {freq[-1]}]"
        )
    inner = freq[(freq > lo) & (freq < hi)]
    omega = np.concatenate(([lo], inner, [hi]))
    return omega, psd.interp(omega)


def smoothing_variance_bound(
    s_z: Psd,
    s_f: PsdOrInfinite,
    band: tuple,
) -> float:
    """Minimum achievable error variance for a given force-noise spectrum:
    V = integral over the band of (1/S_z + 1/S_f)^{-1} domega / (2 pi)."""
    omega, sz = _band_grid(s_z, band)
    with np.errstate(divide="ignore"):
        inv = np.where(sz > 0, 1.0 / sz, np.inf)
        if not isinstance(s_f, _SymbolicInfinite):
            sf = s_f.interp(omega)
            inv = inv + np.where(sf > 0, 1.0 / sf, np.inf)
        integrand = np.where(np.isfinite(inv), 1.0 / inv, 0.0)
        integrand = np.where(inv > 0, integrand, 0.0)
    return float(np.trapezoid(integrand, omega) / (2.0 * np.pi))


def bandwidth_variance(
    s_z: Psd,
    bandwidth_b: Callable[[np.ndarray], np.ndarray],
    band: tuple,
) -> float:
    """Error variance at a given effective bandwidth:
    V = integral of 2 S_z(omega) B(omega) domega / (2 pi)."""
    omega, sz = _band_grid(s_z, band)
    b = np.asarray(bandwidth_b(omega), dtype=float)
    return float(np.trapezoid(2.0 * sz * b, omega) / (2.0 * np.pi))


def indicator_bandwidth(half_width: float) -> Callable[[np.ndarray], np.ndarray]:
    """B(omega) = 1 on |omega| <= half_width, else 0.  half_width = 0 gives
    the static-force limit B == 0 (perfect estimate)."""

    def b(omega: np.ndarray) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        if half_width <= 0:
            return np.zeros_like(omega)
        return (np.abs(omega) <= half_width).astype(float)

    return b
