"""Squeezing spectra, delay compensation and frequency-bin covariance scans.

Every spectrum here is the locked joint quadrature divided by the shot-noise
level measured on the vacuum reference records, expressed in dB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.signal import find_peaks

from . import dsp
from .dsp import DB_REL_SHOT, FrequencyBin, Spectrum
from .errors import MissingRecordError, PreconditionError
from .synth import TraceSet

DIFFERENCE = "difference"
SUM = "sum"
FLOOR_DB = -60.0
DEFAULT_SEGMENT = 1024
DEFAULT_BAND = (0.5e6, 15e6)


def _sign(mode: str) -> float:
    if mode == DIFFERENCE:
        return -1.0
    if mode == SUM:
        return 1.0
    raise ValueError(f"mode must be 'difference' or 'sum', got {mode!r}")


def combine(probe, conjugate, fs: float, mode: str, t_extra: float = 0.0) -> np.ndarray:
    """``(probe -/+ conjugate delayed by t_extra) / sqrt(2)``."""
    c = dsp.apply_delay(conjugate, fs, t_extra) if t_extra else np.asarray(conjugate, float)
    return (np.asarray(probe, float) + _sign(mode) * c) / math.sqrt(2)


def _require(traces: TraceSet, dark: bool):
    if not traces.has_vacuum:
        raise MissingRecordError("trace set has no vacuum reference records")
    if dark and not traces.has_dark:
        raise MissingRecordError("dark subtraction requested but trace set has no dark records")


def _psd(x, fs, segment, method, window, overlap):
    if method == "welch":
        return dsp.psd_welch(x, fs, segment, window, overlap)
    if method == "autocorr":
        return dsp.psd_autocorr(x, fs, segment)
    raise ValueError(f"unknown method {method!r}")


def ratio_to_db(signal, shot, sig_se=None, shot_se=None, floor_db: float = FLOOR_DB):
    """Convert signal/shot densities to dB with validity flags and errors.

    Bins where either density is not positive are flagged invalid and hold
    ``floor_db``.
    """
    signal = np.asarray(signal, float)
    shot = np.asarray(shot, float)
    valid = (shot > 0) & (signal > 0)
    ratio = np.where(valid, signal / np.where(shot > 0, shot, 1.0), 0.0)
    db = np.where(valid, 10 * np.log10(np.maximum(ratio, 10 ** (floor_db / 10))), floor_db)
    se = None
    if sig_se is not None and shot_se is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.hypot(sig_se / signal, shot_se / shot)
        se = np.where(valid, 10 / math.log(10) * rel, np.inf)
    return db, valid, se


def squeezing_spectrum(traces: TraceSet, mode: str = DIFFERENCE, t_extra: float = 0.0,
                       subtract_dark: bool = False, *, segment: int = DEFAULT_SEGMENT,
                       method: str = "welch", window: str = "hann",
                       overlap: float = 0.5) -> Spectrum:
    """Joint-quadrature noise relative to shot noise, in dB.

    The conjugate (and the vacuum-reference conjugate) is delayed by
    ``t_extra``, the channels are combined in ``mode``, and the PSD of the
    result is divided by the PSD of the identically processed vacuum
    reference.  With ``subtract_dark`` the PSD of the combined dark records
    is removed from both first; bins left with a non-positive density are
    marked invalid.

    ``method="autocorr"`` transforms the segment-averaged autocorrelation
    (rectangular, non-overlapping segments) instead of Welch averaging.
    """
    _require(traces, subtract_dark)
    fs = traces.fs
    est = dict(fs=fs, segment=segment, method=method, window=window, overlap=overlap)
    sig = _psd(combine(traces.probe, traces.conjugate, fs, mode, t_extra), **est)
    shot = _psd(combine(traces.vacuum_probe, traces.vacuum_conjugate, fs, mode, t_extra), **est)
    s, r = sig.values, shot.values
    s_se, r_se = sig.stderr, shot.stderr
    if subtract_dark:
        dark = _psd(combine(traces.dark_probe, traces.dark_conjugate, fs, mode, t_extra), **est)
        s, r = s - dark.values, r - dark.values
        s_se = np.hypot(s_se, dark.stderr)
        r_se = np.hypot(r_se, dark.stderr)
    db, valid, se = ratio_to_db(s, r, s_se, r_se)
    return Spectrum(
        sig.freqs, db, sig.resolution, DB_REL_SHOT, se, valid,
        meta={"mode": mode, "t_extra": repr(t_extra), "subtract_dark": str(subtract_dark),
              "method": method},
    )


class PairSpectra:
    """Welch auto- and cross-spectra of one probe/conjugate pair.

    The combined spectrum at any conjugate delay follows without touching
    the time series again::

        S(tau) = (P_pp + P_cc -/+ 2 Re[P_pc exp(-2j pi f tau)]) / 2

    This equals the Welch estimate of the delayed combination up to the
    window-overlap loss of the cross term, a relative
    ``(2/3) (pi tau / L)**2`` for a Hann window of duration ``L``.
    """

    def __init__(self, probe, conjugate, fs, segment=DEFAULT_SEGMENT, window="hann",
                 overlap=0.5):
        self.pp = dsp.psd_welch(probe, fs, segment, window, overlap)
        self.cc = dsp.psd_welch(conjugate, fs, segment, window, overlap)
        self.pc = dsp.cross_psd(probe, conjugate, fs, segment, window, overlap)
        self.freqs = self.pp.freqs

    def combined(self, tau: float, mode: str = DIFFERENCE, mask=None) -> np.ndarray:
        f = self.freqs if mask is None else self.freqs[mask]
        pp, cc, pc = (a.values if mask is None else a.values[mask]
                      for a in (self.pp, self.cc, self.pc))
        cross = np.real(pc * np.exp(-2j * np.pi * f * tau))
        return 0.5 * (pp + cc) + _sign(mode) * cross

    def envelope(self, mask=None):
        """Per-bin extremes over all conjugate phases: ``(A - |P|, A + |P|)``."""
        pp, cc, pc = (a.values if mask is None else a.values[mask]
                      for a in (self.pp, self.cc, self.pc))
        a = 0.5 * (pp + cc)
        return a - np.abs(pc), a + np.abs(pc)


def _reference_densities(traces, mode, subtract_dark, segment):
    """Shot and dark densities of the combined reference records."""
    est = dict(fs=traces.fs, segment=segment, method="welch", window="hann", overlap=0.5)
    shot = _psd(combine(traces.vacuum_probe, traces.vacuum_conjugate, traces.fs, mode),
                **est).values
    dark = 0.0
    if subtract_dark:
        dark = _psd(combine(traces.dark_probe, traces.dark_conjugate, traces.fs, mode),
                    **est).values
    return shot, dark


def _check_band(band, fs):
    f_lo, f_hi = band
    if not 0 < f_lo < f_hi < 0.5 * fs:
        raise PreconditionError(f"band {band} must satisfy 0 < f_lo < f_hi < fs/2")


@dataclass
class DelayScanResult:
    delays: np.ndarray
    objective: np.ndarray
    best_delay: float
    best_objective: float
    refinement: dict = field(default_factory=dict)


def optimize_delay(traces: TraceSet, band=DEFAULT_BAND, window=(-30e-9, 30e-9),
                   mode: str = DIFFERENCE, *, subtract_dark: bool = False,
                   coarse_step: float = 1e-9, tol: float = 0.05e-9,
                   segment: int = DEFAULT_SEGMENT) -> DelayScanResult:
    """Find the conjugate delay that maximises squeezing over ``band``.

    The objective is the mean of the dB spectrum over the band.  A coarse
    grid with ``coarse_step`` spacing is followed by a golden-section
    refinement around the best grid point down to ``tol``.
    """
    _require(traces, subtract_dark)
    _check_band(band, traces.fs)
    t_lo, t_hi = window
    if not t_hi - t_lo >= 2 * coarse_step:
        raise PreconditionError(f"delay window {window} is degenerate")
    pair = PairSpectra(traces.probe, traces.conjugate, traces.fs, segment)
    mask = (pair.freqs >= band[0]) & (pair.freqs <= band[1])
    if not mask.any():
        raise PreconditionError(f"band {band} contains no frequency bins")
    shot, dark = _reference_densities(traces, mode, subtract_dark, segment)
    shot = shot[mask] - (dark[mask] if subtract_dark else 0.0)
    dark_m = dark[mask] if subtract_dark else 0.0
    floor = 10 ** (FLOOR_DB / 10)

    def objective(tau):
        s = pair.combined(tau, mode, mask) - dark_m
        ratio = np.maximum(s / shot, floor)
        return float(np.mean(10 * np.log10(ratio)))

    n_grid = int(round((t_hi - t_lo) / coarse_step)) + 1
    delays = np.linspace(t_lo, t_hi, n_grid)
    values = np.array([objective(t) for t in delays])
    i = int(np.argmin(values))
    best, best_val = float(delays[i]), float(values[i])
    info = {"grid_index": i, "method": "grid"}
    if 0 < i < n_grid - 1:
        step = delays[1] - delays[0]
        base = delays[i - 1]
        # golden section in units of the grid step; xtol is relative to |x| ~ 1
        res = optimize.minimize_scalar(
            lambda u: objective(base + u * step), bracket=(0.0, 1.0, 2.0),
            method="golden", options={"xtol": 0.5 * tol / step},
        )
        t_ref = float(base + res.x * step)
        if res.fun <= best_val and delays[0] <= t_ref <= delays[-1]:
            best, best_val = t_ref, float(res.fun)
            info = {"grid_index": i, "method": "golden", "evaluations": int(res.nfev)}
    else:
        info["at_window_edge"] = True
    return DelayScanResult(delays, values, best, best_val, info)


@dataclass
class OscillationResult:
    period: float
    fitted_delay: float
    extrema_period: float
    spectrum: Spectrum
    lower: Spectrum
    upper: Spectrum


def oscillation_envelope(traces: TraceSet, t_extra: float, *, t_base: float = 0.0,
                         band=DEFAULT_BAND, mode: str = DIFFERENCE,
                         subtract_dark: bool = False, dither_step: float = 0.5e-9,
                         segment: int = DEFAULT_SEGMENT) -> OscillationResult:
    """Spectrum at a large extra delay, its oscillation period and envelopes.

    The conjugate is delayed by ``t_base + t_extra``; with ``t_base`` at the
    compensating delay the spectrum oscillates as ``cos(2 pi f t_extra)``.
    The envelopes are the per-bin minimum and maximum over a dither of the
    delay spanning one oscillation period at the lowest band frequency.
    The period is ``1 / T`` for the delay ``T`` that best fits the
    normalised oscillation ``(U + L - 2 S) / (U - L)`` with a cosine.
    """
    _require(traces, subtract_dark)
    _check_band(band, traces.fs)
    span = band[1] - band[0]
    if abs(t_extra) * span < 1:
        raise PreconditionError(
            f"delay {t_extra:g} s gives less than one oscillation period in the band"
        )
    pair = PairSpectra(traces.probe, traces.conjugate, traces.fs, segment)
    mask = (pair.freqs >= band[0]) & (pair.freqs <= band[1])
    f = pair.freqs[mask]
    shot, dark = _reference_densities(traces, mode, subtract_dark, segment)
    shot = shot[mask] - (dark[mask] if subtract_dark else 0.0)
    dark_m = dark[mask] if subtract_dark else 0.0

    tau = t_base + t_extra
    s = pair.combined(tau, mode, mask) - dark_m
    half = 0.5 / band[0]
    dithers = np.arange(-half, half + dither_step / 2, dither_step)
    lo = np.full(f.size, np.inf)
    hi = np.full(f.size, -np.inf)
    for d in dithers:
        v = pair.combined(tau + d, mode, mask)
        np.minimum(lo, v, out=lo)
        np.maximum(hi, v, out=hi)
    lo -= dark_m
    hi -= dark_m

    # normalised oscillation, +cos for difference mode
    u = -_sign(mode) * (0.5 * (hi + lo) - s) / np.maximum(0.5 * (hi - lo), 1e-300)
    w = (hi - lo) ** 2

    def misfit(t):
        c = np.cos(2 * np.pi * f * t)
        return -(np.sum(w * u * c)) ** 2 / np.sum(w * c * c)

    t_max = 0.5 / (pair.freqs[1] - pair.freqs[0])
    grid = np.arange(0.25 / span, t_max, 0.125 / span)
    scores = np.array([misfit(t) for t in grid])
    k = int(np.argmin(scores))
    res = optimize.minimize_scalar(
        misfit, bounds=(grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]),
        method="bounded", options={"xatol": 1e-13},
    )
    t_fit = float(res.x)

    peaks, _ = find_peaks(u, distance=max(1, int(0.5 / (t_fit * (f[1] - f[0])))))
    peaks = peaks[u[peaks] > 0.5]
    extrema_period = float(np.mean(np.diff(f[peaks]))) if peaks.size > 1 else float("nan")

    def to_spec(v, tag):
        db, valid, _ = ratio_to_db(v, shot)
        return Spectrum(f, db, pair.pp.resolution, DB_REL_SHOT, valid=valid,
                        meta={"curve": tag, "t_extra": repr(t_extra), "t_base": repr(t_base)})

    return OscillationResult(1.0 / t_fit, t_fit, extrema_period,
                             to_spec(s, "delayed"), to_spec(lo, "lower"), to_spec(hi, "upper"))


@dataclass
class CovarianceScan:
    """Probe/conjugate bin covariance against bin spacing.

    ``covariances`` are normalised to the bin width and to the shot-noise
    density, so fully overlapping bins give the mean cross-spectral density
    in shot-noise units.
    """

    bin_width: float
    probe_center: float
    spacings: np.ndarray
    covariances: np.ndarray
    standard_errors: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return self.covariances / self.standard_errors


def qumode_scan(traces: TraceSet, probe_center: float = 1e6, bin_width: float = 200e3,
                max_spacing: float = 2.5, t_extra: float = 0.0, *,
                spacing_step: float = 0.25, blocks: int = 32) -> CovarianceScan:
    """Covariance of a fixed probe bin with a conjugate bin shifted upward.

    The conjugate is delay-compensated by ``t_extra``; the conjugate bin
    center moves from ``probe_center`` in steps of ``spacing_step`` bin
    widths up to ``max_spacing``.
    """
    fs, n = traces.fs, traces.n
    if max_spacing < 0 or spacing_step <= 0:
        raise PreconditionError("max_spacing must be >= 0 and spacing_step > 0")
    spacings = np.arange(0.0, max_spacing + 0.5 * spacing_step, spacing_step)
    probe_bin = FrequencyBin(probe_center, bin_width)
    probe_bin.check(fs, n)
    FrequencyBin(probe_center + spacings[-1] * bin_width, bin_width).check(fs, n)

    shot_density = 2.0 / fs
    freqs = np.fft.rfftfreq(n, 1 / fs)
    P = np.fft.rfft(np.asarray(traces.probe, float))
    pf = np.fft.irfft(np.where((freqs >= probe_bin.lo) & (freqs < probe_bin.hi), P, 0), n=n)
    del P
    C = np.fft.rfft(np.asarray(traces.conjugate, float))
    if t_extra:
        C = dsp.delay_spectrum(C, n, fs, t_extra)
    covs, ses = [], []
    for s in spacings:
        b = FrequencyBin(probe_center + s * bin_width, bin_width)
        cf = np.fft.irfft(np.where((freqs >= b.lo) & (freqs < b.hi), C, 0), n=n)
        v, se = dsp.bin_covariance_from_filtered(pf, cf, bin_width, blocks)
        covs.append(v / shot_density)
        ses.append(se / shot_density)
    return CovarianceScan(bin_width, probe_center, spacings, np.array(covs), np.array(ses))


def fit_triangle(scan: CovarianceScan):
    """Weighted least-squares fit of ``K * max(0, 1 - s)``.

    Returns ``(K, residuals_in_standard_errors)``.
    """
    tri = np.maximum(0.0, 1.0 - scan.spacings)
    w = 1.0 / scan.standard_errors**2
    k = float(np.sum(w * tri * scan.covariances) / np.sum(w * tri * tri))
    return k, (scan.covariances - k * tri) / scan.standard_errors


def lowfreq_spectrum(traces: TraceSet, mode: str = DIFFERENCE, t_extra: float = 0.0,
                     subtract_dark: bool = False, min_duration: float = 10.0) -> Spectrum:
    """Sub-Hz spectrum from one transform of the whole record.

    The resolution is ``1 / duration``; records shorter than
    ``min_duration`` seconds are rejected.
    """
    if traces.duration < min_duration * (1 - 1e-12):
        raise PreconditionError(
            f"record lasts {traces.duration:g} s, at least {min_duration:g} s required"
        )
    seg = 1 << (traces.n.bit_length() - 1)
    return squeezing_spectrum(traces, mode, t_extra, subtract_dark, segment=seg,
                              method="autocorr")
