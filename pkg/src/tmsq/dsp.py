"""Two-channel spectral estimation, digital delay and square band filters.

Conventions
-----------
* One-sided power spectral densities in (sample units)^2 per Hz.  For a
  record normalised to the shot-noise standard deviation, white shot noise
  has the density ``2 / fs``.
* Cross spectra follow ``P_xy = E[conj(X) Y]`` so that ``P_yx = conj(P_xy)``
  and a copy of ``x`` delayed by ``tau`` gives ``P_xy = P_xx exp(-2j pi f tau)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import signal

from .errors import PreconditionError

ABSOLUTE = "absolute"
DB_REL_SHOT = "dB-rel-shot"

# bounds the transient memory of batched segment FFTs
_CHUNK_SAMPLES = 1 << 22


@dataclass
class Spectrum:
    """One-sided spectrum on an ascending frequency grid.

    ``valid`` marks bins that carry a meaningful value; invalid bins hold a
    floor value and must not be read as measurements.
    """

    freqs: np.ndarray
    values: np.ndarray
    resolution: float
    unit: str = ABSOLUTE
    stderr: np.ndarray | None = None
    valid: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.values = np.asarray(self.values)
        if self.freqs.shape != self.values.shape:
            raise ValueError("freqs and values must have the same shape")
        if self.freqs.size and (self.freqs[0] < 0 or np.any(np.diff(self.freqs) <= 0)):
            raise ValueError("freqs must be strictly ascending and start >= 0")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrum values must be finite")
        if self.unit not in (ABSOLUTE, DB_REL_SHOT):
            raise ValueError(f"unknown unit {self.unit!r}")
        if self.valid is None:
            self.valid = np.ones(self.freqs.shape, dtype=bool)

    def __len__(self):
        return self.freqs.size

    def band(self, f_lo: float, f_hi: float) -> np.ndarray:
        """Boolean mask of bins with ``f_lo <= f <= f_hi``."""
        return (self.freqs >= f_lo) & (self.freqs <= f_hi)

    def select(self, mask) -> "Spectrum":
        return Spectrum(
            self.freqs[mask], self.values[mask], self.resolution, self.unit,
            None if self.stderr is None else self.stderr[mask],
            self.valid[mask], dict(self.meta),
        )

    def value_at(self, f: float):
        return self.values[np.argmin(np.abs(self.freqs - f))]


@dataclass(frozen=True)
class FrequencyBin:
    """A band ``[center - width/2, center + width/2)`` defining one qumode."""

    center: float
    width: float

    @property
    def lo(self) -> float:
        return self.center - 0.5 * self.width

    @property
    def hi(self) -> float:
        return self.center + 0.5 * self.width

    def check(self, fs: float, n: int | None = None):
        if not self.width > 0:
            raise PreconditionError(f"bin width must be > 0, got {self.width}")
        if self.lo < 0 or self.hi > 0.5 * fs:
            raise PreconditionError(
                f"bin [{self.lo:g}, {self.hi:g}] Hz lies outside (0, {0.5 * fs:g}) Hz"
            )
        if n is not None and self.width < fs / n:
            raise PreconditionError(
                f"bin width {self.width:g} Hz is below the record resolution {fs / n:g} Hz"
            )


def _check_segment(n: int, segment: int):
    if segment < 2 or segment & (segment - 1):
        raise PreconditionError(f"segment must be a power of two >= 2, got {segment}")
    if segment > n:
        raise PreconditionError(f"segment {segment} exceeds record length {n}")


def _window(name: str, segment: int) -> np.ndarray:
    if name == "rectangular":
        return np.ones(segment)
    if name == "hann":
        return signal.windows.hann(segment, sym=False)
    raise ValueError(f"unknown window {name!r}")


def _step(segment: int, overlap: float) -> int:
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    return max(1, int(round(segment * (1 - overlap))))


def _segment_ffts(x, segment, step, window):
    """Yield batches of windowed segment FFTs."""
    view = np.lib.stride_tricks.sliding_window_view(x, segment)[::step]
    per_chunk = max(1, _CHUNK_SAMPLES // segment)
    for start in range(0, view.shape[0], per_chunk):
        yield np.fft.rfft(view[start:start + per_chunk] * window, axis=-1)


def _n_segments(n, segment, step):
    return (n - segment) // step + 1


def _onesided(segment: int) -> np.ndarray:
    k = np.full(segment // 2 + 1, 2.0)
    k[0] = 1.0
    k[-1] = 1.0
    return k


def welch_dof_factor(window: np.ndarray, step: int, n_seg: int) -> float:
    """Variance inflation of a Welch average relative to independent segments.

    Uses the white-noise correlation between periodograms of overlapping
    segments, ``rho(j) = (sum w[t] w[t + j step] / sum w^2)^2``.
    """
    energy = np.sum(window**2)
    total = 1.0
    j = 1
    while j < n_seg and j * step < window.size:
        rho = (np.sum(window[j * step:] * window[:window.size - j * step]) / energy) ** 2
        total += 2 * (1 - j / n_seg) * rho
        j += 1
    return total


def _welch(x, y, fs, segment, window, overlap):
    x = np.asarray(x, dtype=float)
    n = x.size
    _check_segment(n, segment)
    w = _window(window, segment)
    step = _step(segment, overlap)
    n_seg = _n_segments(n, segment, step)
    if y is not None:
        y = np.asarray(y, dtype=float)
        if y.shape != x.shape:
            raise ValueError("channels must have equal length")
    # a channel crossed with itself takes the auto path so that the result is exactly real
    cross = y is not None and not np.array_equal(x, y)
    acc = np.zeros(segment // 2 + 1, dtype=complex if cross else float)
    if not cross:
        for X in _segment_ffts(x, segment, step, w):
            acc += np.sum(X.real**2 + X.imag**2, axis=0)
    else:
        for X, Y in zip(_segment_ffts(x, segment, step, w),
                        _segment_ffts(y, segment, step, w)):
            acc += np.sum(np.conj(X) * Y, axis=0)
    psd = acc * _onesided(segment) / (fs * np.sum(w**2) * n_seg)
    inflation = welch_dof_factor(w, step, n_seg)
    return psd, n_seg, inflation


def _stderr(psd_abs, n_seg, inflation):
    se = np.abs(psd_abs) * np.sqrt(inflation / n_seg)
    # DC and Nyquist periodograms have one degree of freedom instead of two
    se[0] *= np.sqrt(2)
    se[-1] *= np.sqrt(2)
    return se


def psd_welch(x, fs: float, segment: int, window: str = "hann",
              overlap: float = 0.5) -> Spectrum:
    """Welch-averaged one-sided PSD.

    Each segment is multiplied by ``window`` and the periodograms are scaled
    by ``1 / (fs * sum(window**2))`` (density normalisation), so white noise
    of variance ``s2`` gives ``2 s2 / fs`` independent of the window.
    """
    if fs <= 0:
        raise PreconditionError("fs must be > 0")
    psd, n_seg, inflation = _welch(x, None, fs, segment, window, overlap)
    return Spectrum(
        np.fft.rfftfreq(segment, 1 / fs), psd, fs / segment,
        stderr=_stderr(psd, n_seg, inflation),
        meta={"method": "welch", "window": window, "segments": n_seg},
    )


def cross_psd(x, y, fs: float, segment: int, window: str = "hann",
              overlap: float = 0.5) -> Spectrum:
    """Welch-averaged complex cross spectral density ``E[conj(X) Y]``."""
    if fs <= 0:
        raise PreconditionError("fs must be > 0")
    psd, n_seg, _ = _welch(x, y, fs, segment, window, overlap)
    return Spectrum(
        np.fft.rfftfreq(segment, 1 / fs), psd.astype(complex), fs / segment,
        meta={"method": "welch-cross", "window": window, "segments": n_seg},
    )


def autocorrelation(x, segment: int) -> np.ndarray:
    """Segment-averaged biased autocorrelation at lags ``0 .. segment-1``.

    ``r[m] = (1/L) sum_t x[t] x[t+m]`` within each non-overlapping segment of
    length ``L``, averaged over segments.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    _check_segment(n, segment)
    n_seg = n // segment
    segs = x[:n_seg * segment].reshape(n_seg, segment)
    power = np.zeros(segment + 1)
    per_chunk = max(1, _CHUNK_SAMPLES // segment)
    for start in range(0, n_seg, per_chunk):
        # zero padding to 2L makes the circular correlation linear
        F = np.fft.rfft(segs[start:start + per_chunk], n=2 * segment, axis=-1)
        power += np.sum(F.real**2 + F.imag**2, axis=0)
    r = np.fft.irfft(power, n=2 * segment)[:segment]
    return r / (segment * n_seg)


def psd_autocorr(x, fs: float, segment: int) -> Spectrum:
    """One-sided PSD as the Fourier transform of the averaged autocorrelation.

    With ``segment == len(x)`` this is a single long transform with
    resolution ``fs / n``.
    """
    if fs <= 0:
        raise PreconditionError("fs must be > 0")
    x = np.asarray(x, dtype=float)
    r = autocorrelation(x, segment)
    # fold negative lags onto the length-L circle: c[m] = r[m] + r[-m]
    c = r.copy()
    c[1:] += r[:0:-1]
    psd = np.fft.rfft(c).real * _onesided(segment) / fs
    np.maximum(psd, 0.0, out=psd)
    n_seg = x.size // segment
    return Spectrum(
        np.fft.rfftfreq(segment, 1 / fs), psd, fs / segment,
        stderr=_stderr(psd, n_seg, 1.0),
        meta={"method": "autocorrelation", "segments": n_seg},
    )


def _delay_factor(n: int, fs: float, tau: float) -> np.ndarray:
    k = np.arange(n // 2 + 1)
    h = np.exp(-2j * np.pi * k * (tau * fs / n))
    if n % 2 == 0:
        # a real record cannot carry a phase at Nyquist; use the nearest sign
        h[-1] = np.cos(np.pi * np.round(tau * fs))
    return h


def apply_delay(x, fs: float, tau: float) -> np.ndarray:
    """Circularly delay ``x`` by ``tau`` seconds via a linear phase ramp.

    Whole-sample delays (to within 1e-9 samples) reduce to ``np.roll``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if fs <= 0:
        raise PreconditionError("fs must be > 0")
    if abs(tau) > n / fs:
        raise PreconditionError(f"delay {tau:g} s exceeds the record duration {n / fs:g} s")
    shift = tau * fs
    # tau = k / fs rarely gives an exact integer in floating point
    if abs(shift - np.round(shift)) < 1e-9:
        return np.roll(x, int(np.round(shift)))
    return np.fft.irfft(np.fft.rfft(x) * _delay_factor(n, fs, tau), n=n)


def delay_spectrum(X, n: int, fs: float, tau: float):
    """Apply a delay to an ``rfft`` spectrum, matching :func:`apply_delay`."""
    return X * _delay_factor(n, fs, tau)


def _bin_mask(n: int, fs: float, b: FrequencyBin) -> np.ndarray:
    f = np.fft.rfftfreq(n, 1 / fs)
    return (f >= b.lo) & (f < b.hi)


def bandpass_square(x, fs: float, bin: FrequencyBin) -> np.ndarray:
    """Hard-edged frequency-domain band selection (non-causal).

    Keeps FFT bins with ``lo <= f < hi`` and zeroes the rest.
    """
    x = np.asarray(x, dtype=float)
    bin.check(fs, x.size)
    X = np.fft.rfft(x)
    X[~_bin_mask(x.size, fs, bin)] = 0
    return np.fft.irfft(X, n=x.size)


def bandpass_butter(x, fs: float, bin: FrequencyBin, order: int = 8) -> np.ndarray:
    """Causal Butterworth band-pass with -3 dB edges at the bin edges."""
    x = np.asarray(x, dtype=float)
    bin.check(fs, x.size)
    sos = signal.butter(order, [max(bin.lo, 1e-9 * fs), bin.hi], btype="bandpass",
                        fs=fs, output="sos")
    return signal.sosfilt(sos, x)


class BinCovariance(NamedTuple):
    value: float
    stderr: float
    equal_width: bool

    @property
    def z(self) -> float:
        return self.value / self.stderr if self.stderr > 0 else 0.0


def jackknife_ratio(num, den):
    """Delete-one jackknife of ``sum(num) / sum(den)`` over blocks.

    Returns ``(estimate, standard_error)``.
    """
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    m = num.size
    if m < 2:
        raise PreconditionError("jackknife needs at least two blocks")
    est = num.sum() / den.sum()
    loo = (num.sum() - num) / (den.sum() - den)
    se = np.sqrt((m - 1) / m * np.sum((loo - loo.mean()) ** 2))
    return est, se


def _block_sums(v, blocks):
    n = v.size
    edges = np.linspace(0, n, blocks + 1).astype(int)
    return np.add.reduceat(v, edges[:-1]), np.diff(edges).astype(float)


def bin_covariance_from_filtered(xf, yf, width: float, blocks: int = 32):
    """Covariance per Hz of two band-limited records with a jackknife error."""
    sums, counts = _block_sums(xf * yf, blocks)
    est, se = jackknife_ratio(sums, counts)
    return est / width, se / width


def bin_covariance(x, y, fs: float, bin_x: FrequencyBin, bin_y: FrequencyBin,
                   blocks: int = 32) -> BinCovariance:
    """Sample covariance of the two square-filtered channels divided by the bin width.

    The standard error comes from a delete-one jackknife over ``blocks``
    contiguous time blocks.  Unequal bin widths are allowed; the mean width
    normalises the result and ``equal_width`` is False.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("channels must have equal length")
    bin_x.check(fs, x.size)
    bin_y.check(fs, y.size)
    equal = bool(np.isclose(bin_x.width, bin_y.width))
    if not equal:
        warnings.warn("bin_covariance called with unequal bin widths", stacklevel=2)
    xf = bandpass_square(x, fs, bin_x)
    yf = bandpass_square(y, fs, bin_y)
    width = 0.5 * (bin_x.width + bin_y.width)
    value, se = bin_covariance_from_filtered(xf, yf, width, blocks)
    return BinCovariance(value, se, equal)
