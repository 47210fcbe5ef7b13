"""Core numerical kernels: convolution, cross-correlation, DWT, spectra.

All routines operate on 1-D float64 arrays and are pure functions; they
can be called concurrently without locking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

# Below this product of lengths, direct convolution beats the FFT path.
# Correctness is identical on both sides of the crossover.
_DIRECT_CONV_LIMIT = 2 ** 16

# Symlet-4 decomposition low-pass filter, standard published table,
# 15+ significant digits.  Orientation follows the usual decomposition
# convention; validity is enforced by the QMF invariants below rather
# than by citation.
SYM4_LOWPASS = (
    -0.07576571478927333,
    -0.02963552764599851,
    0.49761866763201545,
    0.8037387518059161,
    0.29785779560527736,
    -0.09921954357684722,
    -0.012603967262037833,
    0.0322231006040427,
)


def _as_signal(x, name="signal"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if x.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite samples")
    return x


def next_pow2(n: int) -> int:
    """Smallest power of two >= n."""
    return 1 << (int(n) - 1).bit_length()


@dataclass(frozen=True)
class WaveletFilterPair:
    """Orthonormal analysis filter pair for the pyramid DWT.

    The high-pass filter is tied to the low-pass one by the
    quadrature-mirror relation hi[k] = (-1)^k * lo[L-1-k].
    """

    lowpass: np.ndarray
    highpass: np.ndarray

    @classmethod
    def from_lowpass(cls, lowpass) -> "WaveletFilterPair":
        lo = _as_signal(lowpass, "lowpass")
        L = lo.size
        hi = np.array([(-1.0) ** k * lo[L - 1 - k] for k in range(L)])
        pair = cls(lowpass=lo, highpass=hi)
        pair.validate()
        return pair

    def validate(self) -> None:
        lo = self.lowpass
        if abs(lo.sum() - np.sqrt(2.0)) > 1e-10:
            raise ValueError("lowpass does not sum to sqrt(2)")
        if abs((lo ** 2).sum() - 1.0) > 1e-10:
            raise ValueError("lowpass is not unit-energy")
        L = lo.size
        expect_hi = np.array([(-1.0) ** k * lo[L - 1 - k] for k in range(L)])
        if not np.allclose(self.highpass, expect_hi, atol=1e-12, rtol=0.0):
            raise ValueError("highpass violates the quadrature-mirror relation")

    def __len__(self) -> int:
        return self.lowpass.size


def sym4() -> WaveletFilterPair:
    """Order-4 Symlet analysis pair (8 taps)."""
    return WaveletFilterPair.from_lowpass(SYM4_LOWPASS)


def convolve_full(a, b) -> np.ndarray:
    """Full linear convolution, output length len(a)+len(b)-1.

    out[t] = sum_k a[k] * b[t-k].  Uses the direct sum for small
    problems and a power-of-two FFT above the crossover; both paths
    agree to ~1e-12 absolute on unit-scale inputs.
    """
    a = _as_signal(a, "a")
    b = _as_signal(b, "b")
    n_out = a.size + b.size - 1
    if a.size * b.size < _DIRECT_CONV_LIMIT:
        return np.convolve(a, b, mode="full")
    nfft = next_pow2(n_out)
    out = _fft.irfft(_fft.rfft(a, nfft) * _fft.rfft(b, nfft), nfft)
    return out[:n_out]


def cross_correlate_valid(x, a) -> np.ndarray:
    """Sliding inner product of a template against a signal.

    out[t] = sum_k x[t+k] * a[k] for t = 0 .. len(x)-len(a).
    Equals convolve_full(reverse(a), x) restricted to full-overlap lags.
    """
    x = _as_signal(x, "x")
    a = _as_signal(a, "a")
    if a.size > x.size:
        raise ValueError(f"template length {a.size} exceeds signal length {x.size}")
    n_out = x.size - a.size + 1
    if x.size * a.size < _DIRECT_CONV_LIMIT:
        return np.correlate(x, a, mode="valid")
    nfft = next_pow2(x.size)
    out = _fft.irfft(_fft.rfft(x, nfft) * np.conj(_fft.rfft(a, nfft)), nfft)
    return out[:n_out]


def _dwt_single(x: np.ndarray, filters: WaveletFilterPair):
    """One analysis level with periodic extension; x must have even length >= L."""
    n = x.size
    L = len(filters)
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(L)[None, :]) % n
    windows = x[idx]
    return windows @ filters.lowpass, windows @ filters.highpass


def _idwt_single(approx: np.ndarray, detail: np.ndarray,
                 filters: WaveletFilterPair) -> np.ndarray:
    """Adjoint of _dwt_single; exact inverse for orthonormal filters."""
    n = 2 * approx.size
    L = len(filters)
    x = np.zeros(n)
    base = (2 * np.arange(approx.size)[:, None] + np.arange(L)[None, :]) % n
    np.add.at(x, base, approx[:, None] * filters.lowpass[None, :])
    np.add.at(x, base, detail[:, None] * filters.highpass[None, :])
    return x


def dwt_multilevel(x, levels: int, filters: WaveletFilterPair | None = None):
    """Pyramid DWT with periodic boundary handling.

    Returns (details, approx) where details[k] holds the level-(k+1)
    detail band.  Each level halves the length, so len(x) must be
    divisible by 2**levels and stay >= the filter length throughout.
    """
    x = _as_signal(x)
    if filters is None:
        filters = sym4()
    levels = int(levels)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    L = len(filters)
    details = []
    current = x
    for lev in range(levels):
        if current.size % 2 != 0 or current.size < L:
            raise ValueError(
                f"signal of length {x.size} too short for {levels} levels "
                f"(level {lev + 1} would see length {current.size})"
            )
        current, d = _dwt_single(current, filters)
        details.append(d)
    return details, current


def idwt_multilevel(bands, filters: WaveletFilterPair | None = None) -> np.ndarray:
    """Invert dwt_multilevel; bands is the (details, approx) pair it returned."""
    if filters is None:
        filters = sym4()
    details, approx = bands
    current = np.asarray(approx, dtype=np.float64)
    for lev, d in enumerate(reversed(details)):
        d = np.asarray(d, dtype=np.float64)
        if d.size != current.size:
            raise ValueError(
                f"band length mismatch at level {len(details) - lev}: "
                f"detail {d.size} vs approximation {current.size}"
            )
        current = _idwt_single(current, d, filters)
    return current


def power_spectrum(x, fs: float):
    """One-sided magnitude spectrum of the mean-removed signal.

    Returns (frequencies_hz, magnitudes) with len(x)//2 + 1 bins.
    """
    x = _as_signal(x)
    if fs <= 0:
        raise ValueError("sample rate must be positive")
    centered = x - x.mean()
    mags = np.abs(_fft.rfft(centered))
    freqs = np.fft.rfftfreq(x.size, d=1.0 / float(fs))
    return freqs, mags
