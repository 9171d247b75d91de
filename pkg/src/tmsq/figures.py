"""Canned end-to-end reproductions of the squeezing figures.

Each ``figN`` function synthesizes traces for its configuration and returns
an ordered mapping of curve name to Spectrum or CovarianceScan, plus a small
summary dict.
"""

from __future__ import annotations

import numpy as np

from . import analysis
from .config import Config, layered, preset_values
from .dsp import DB_REL_SHOT, Spectrum
from .model import Quadrature
from .synth import synthesize

# applied on top of the preset, below config files and flags
FIGURE_DEFAULTS = {
    "fig2": {"f_hp": 300e3},
    "fig3": {"f_hp": 300e3},
    "fig4": {"fs": 2**23 / 10, "n": 2**23, "s_elec": 0.0, "f_hp": 0.0,
             "reference": "paired"},
    "fig5": {"fs": 10e6, "n": 2**23},
}
LARGE_DELAY = 200e-9
FIG4_MAX_FREQ = 10.0
FIG5_WIDTHS = (200e3, 50e3, 1e3)


def shot_spectrum(traces, subtract_dark=True, segment=analysis.DEFAULT_SEGMENT,
                  method="welch") -> Spectrum:
    """Vacuum-reference density relative to the nominal shot level ``2 / fs``."""
    est = dict(fs=traces.fs, segment=segment, method=method, window="hann", overlap=0.5)
    vac = analysis._psd(analysis.combine(traces.vacuum_probe, traces.vacuum_conjugate,
                                         traces.fs, analysis.DIFFERENCE), **est)
    s, se = vac.values, vac.stderr
    if subtract_dark:
        dark = analysis._psd(analysis.combine(traces.dark_probe, traces.dark_conjugate,
                                              traces.fs, analysis.DIFFERENCE), **est)
        s, se = s - dark.values, np.hypot(se, dark.stderr)
    nominal = np.full_like(s, 2.0 / traces.fs)
    db, valid, err = analysis.ratio_to_db(s, nominal, se, np.zeros_like(s))
    return Spectrum(vac.freqs, db, vac.resolution, DB_REL_SHOT, err, valid,
                    meta={"curve": "shot"})


def _optimum(traces, mode, cfg: Config):
    band = (analysis.DEFAULT_BAND[0], min(analysis.DEFAULT_BAND[1], 0.4 * cfg.fs))
    return analysis.optimize_delay(traces, band=band, mode=mode).best_delay


def fig2(cfg: Config, seed: int, threads: int = 1):
    traces = synthesize(cfg.params, cfg.fs, cfg.n, seed, threads=threads,
                        reference=cfg.reference)
    t_opt = _optimum(traces, analysis.DIFFERENCE, cfg)
    sq = analysis.squeezing_spectrum
    curves = {
        "shot": shot_spectrum(traces),
        "default_delay": sq(traces, analysis.DIFFERENCE, 0.0, True),
        "optimum_squeezing": sq(traces, analysis.DIFFERENCE, t_opt, True),
        "optimum_antisqueezing": sq(traces, analysis.SUM, t_opt, True),
        "delay_200ns": sq(traces, analysis.DIFFERENCE, t_opt + LARGE_DELAY, True),
    }
    return curves, {"best_delay_ns": t_opt * 1e9}, traces


def fig3(cfg: Config, seed: int, threads: int = 1):
    sq = analysis.squeezing_spectrum
    curves, summary = {}, {}
    traces_x = synthesize(cfg.params.replace(lock_quadrature=Quadrature.X), cfg.fs, cfg.n,
                          seed, threads=threads, reference=cfg.reference)
    t_x = _optimum(traces_x, analysis.DIFFERENCE, cfg)
    curves["shot"] = shot_spectrum(traces_x)
    curves["x_squeezing"] = sq(traces_x, analysis.DIFFERENCE, t_x, True)
    curves["x_antisqueezing"] = sq(traces_x, analysis.SUM, t_x, True)
    curves["x_squeezing_raw"] = sq(traces_x, analysis.DIFFERENCE, t_x, False)
    del traces_x
    traces_p = synthesize(cfg.params.replace(lock_quadrature=Quadrature.P), cfg.fs, cfg.n,
                          seed, threads=threads, reference=cfg.reference)
    t_p = _optimum(traces_p, analysis.SUM, cfg)
    curves["p_squeezing"] = sq(traces_p, analysis.SUM, t_p, True)
    curves["p_antisqueezing"] = sq(traces_p, analysis.DIFFERENCE, t_p, True)
    summary.update(best_delay_x_ns=t_x * 1e9, best_delay_p_ns=t_p * 1e9)
    return curves, summary, traces_p


def fig4(cfg: Config, seed: int, threads: int = 1, max_freq: float = FIG4_MAX_FREQ):
    traces = synthesize(cfg.params, cfg.fs, cfg.n, seed, threads=threads,
                        reference=cfg.reference, dark=False)
    spec = analysis.lowfreq_spectrum(traces, t_extra=cfg.params.t_group)
    seg = spec.freqs.size * 2 - 2
    shot = shot_spectrum(traces, subtract_dark=False, segment=seg, method="autocorr")
    keep = (spec.freqs > 0) & (spec.freqs <= max_freq)
    below = spec.values[(spec.freqs > 0) & (spec.freqs < 1.0)]
    summary = {"resolution_hz": spec.resolution,
               "max_db_below_1hz": float(below.max()) if below.size else float("nan")}
    return {"squeezed": spec.select(keep), "shot": shot.select(keep)}, summary, traces


def fig5(cfg: Config, seed: int, threads: int = 1, max_spacing: float = 2.5):
    traces = synthesize(cfg.params, cfg.fs, cfg.n, seed, threads=threads,
                        reference=cfg.reference, dark=False)
    t_opt = _optimum(traces, analysis.DIFFERENCE, cfg)
    curves, summary = {}, {"best_delay_ns": t_opt * 1e9}
    for width in FIG5_WIDTHS:
        scan = analysis.qumode_scan(traces, 1e6, width, max_spacing, t_opt)
        name = f"width_{width / 1e3:g}khz"
        curves[name] = scan
        k, _ = analysis.fit_triangle(scan)
        summary[f"{name}_K"] = k
        summary[f"{name}_max_abs_z_beyond_1"] = float(
            np.max(np.abs(scan.z[scan.spacings > 1])))
    return curves, summary, traces


FIGURES = {"fig2": fig2, "fig3": fig3, "fig4": fig4, "fig5": fig5}


def figure_config(name: str, file_values: dict, flag_values: dict) -> Config:
    """Preset < figure defaults < config file < flags."""
    return layered(preset_values(), FIGURE_DEFAULTS[name], file_values, flag_values)
