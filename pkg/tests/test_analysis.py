import numpy as np
import pytest

from tmsq import analysis
from tmsq.errors import MissingRecordError, PreconditionError
from tmsq.model import Quadrature, joint_variance, measured_ratio, paper_like
from tmsq.synth import TraceSet, synthesize

FS = 50e6


@pytest.fixture(scope="module")
def vacuum_traces(paper_traces):
    """Vacuum records in both the signal and the reference slots."""
    t = paper_traces
    return TraceSet(t.fs, t.vacuum_probe, t.vacuum_conjugate, t.dark_probe, t.dark_conjugate,
                    t.vacuum_probe, t.vacuum_conjugate, dict(t.meta))


def test_vacuum_self_normalisation(vacuum_traces):
    spec = analysis.squeezing_spectrum(vacuum_traces, t_extra=10.4e-9)
    band = spec.band(100e3, 10e6)
    assert np.all(np.abs(spec.values[band]) <= 0.1)


def test_squeezing_level_at_100khz(paper_traces, paper_params):
    t = paper_params.t_group
    spec = analysis.squeezing_spectrum(paper_traces, analysis.DIFFERENCE, t, subtract_dark=True)
    assert spec.value_at(100e3) == pytest.approx(-5.0, abs=0.3)
    raw = analysis.squeezing_spectrum(paper_traces, analysis.DIFFERENCE, t)
    f = spec.freqs[np.argmin(np.abs(spec.freqs - 100e3))]
    expected = 10 * np.log10(measured_ratio(paper_params, f, t))
    assert raw.value_at(100e3) == pytest.approx(expected, abs=0.3)
    anti = analysis.squeezing_spectrum(paper_traces, analysis.SUM, t, subtract_dark=True)
    assert anti.value_at(100e3) > 5.0


def test_spectrum_with_autocorr_method(paper_traces, paper_params):
    t = paper_params.t_group
    a = analysis.squeezing_spectrum(paper_traces, t_extra=t, subtract_dark=True, method="autocorr")
    assert a.meta["method"] == "autocorr"
    band = a.band(0.5e6, 5e6)
    model = 10 * np.log10(joint_variance(paper_params, a.freqs[band], t))
    assert np.max(np.abs(a.values[band] - model)) < 0.3


def test_missing_records_rejected(paper_traces):
    bare = TraceSet(FS, paper_traces.probe, paper_traces.conjugate)
    with pytest.raises(MissingRecordError):
        analysis.squeezing_spectrum(bare)
    no_dark = TraceSet(FS, paper_traces.probe, paper_traces.conjugate,
                       vacuum_probe=paper_traces.vacuum_probe,
                       vacuum_conjugate=paper_traces.vacuum_conjugate)
    analysis.squeezing_spectrum(no_dark)
    with pytest.raises(MissingRecordError):
        analysis.squeezing_spectrum(no_dark, subtract_dark=True)


def test_nonpositive_shot_bins_flagged(small_traces):
    t = small_traces
    # dark records louder than the reference leave nothing after subtraction
    loud = TraceSet(FS, t.probe, t.conjugate, 3 * t.vacuum_probe, 3 * t.vacuum_conjugate,
                    t.vacuum_probe, t.vacuum_conjugate)
    spec = analysis.squeezing_spectrum(loud, subtract_dark=True)
    assert not spec.valid[1:].any()
    assert np.all(spec.values[~spec.valid] == analysis.FLOOR_DB)


def test_ratio_to_db_floor_and_validity():
    db, valid, _ = analysis.ratio_to_db(np.array([1.0, 1e-9, 1.0, -1.0]),
                                        np.array([10.0, 1.0, -1.0, 1.0]))
    assert db[0] == pytest.approx(-10.0)
    assert db[1] == analysis.FLOOR_DB and valid[1]
    assert not valid[2] and not valid[3]


def test_combine_modes():
    p = np.array([1.0, 2.0])
    c = np.array([0.5, 0.5])
    np.testing.assert_allclose(analysis.combine(p, c, FS, analysis.DIFFERENCE),
                               (p - c) / np.sqrt(2))
    np.testing.assert_allclose(analysis.combine(p, c, FS, analysis.SUM), (p + c) / np.sqrt(2))
    with pytest.raises(ValueError):
        analysis.combine(p, c, FS, "product")


# ---- delay optimisation --------------------------------------------------------

def test_optimize_delay_recovers_group_delay(paper_traces, paper_params):
    res = analysis.optimize_delay(paper_traces)
    assert res.best_delay == pytest.approx(paper_params.t_group, abs=0.5e-9)
    assert res.best_objective <= res.objective.min()
    assert res.delays[0] == -30e-9 and res.delays[-1] == 30e-9
    assert np.allclose(np.diff(res.delays), 1e-9)
    assert res.refinement["method"] == "golden"


@pytest.mark.parametrize("t_group, etas", [(0.0, (0.85, 0.85)), (10e-9, (0.9, 0.7))])
def test_optimize_delay_other_injections(t_group, etas):
    p = paper_like().replace(t_group=t_group, eta_p=etas[0], eta_c=etas[1])
    ts = synthesize(p, FS, 2**21, seed=31)
    res = analysis.optimize_delay(ts)
    assert res.best_delay == pytest.approx(t_group, abs=0.5e-9)


def test_optimize_delay_preconditions(small_traces):
    with pytest.raises(PreconditionError):
        analysis.optimize_delay(small_traces, band=(5e6, 1e6))
    with pytest.raises(PreconditionError):
        analysis.optimize_delay(small_traces, band=(1e6, 30e6))
    with pytest.raises(PreconditionError):
        analysis.optimize_delay(small_traces, window=(1e-9, 1.5e-9))
    with pytest.raises(PreconditionError):
        analysis.optimize_delay(small_traces, band=(1.0e6, 1.001e6))


# ---- oscillation -----------------------------------------------------------------

@pytest.mark.parametrize("t_extra, band", [(200e-9, (0.5e6, 15e6)), (100e-9, (0.5e6, 15e6)),
                                           (-200e-9, (0.5e6, 15e6))])
def test_oscillation_period(paper_traces, paper_params, t_extra, band):
    res = analysis.oscillation_envelope(paper_traces, t_extra, t_base=paper_params.t_group,
                                        band=band)
    resolution = res.spectrum.resolution
    assert res.period == pytest.approx(1 / abs(t_extra), abs=resolution)


def test_oscillation_requires_a_period(paper_traces):
    with pytest.raises(PreconditionError):
        analysis.oscillation_envelope(paper_traces, 0.0)
    with pytest.raises(PreconditionError):
        analysis.oscillation_envelope(paper_traces, 50e-9)


def test_envelope_consistency(paper_traces, paper_params):
    t = paper_params.t_group
    res = analysis.oscillation_envelope(paper_traces, 200e-9, t_base=t)
    sq = analysis.squeezing_spectrum(paper_traces, analysis.DIFFERENCE, t)
    anti = analysis.squeezing_spectrum(paper_traces, analysis.SUM, t)
    band = sq.band(0.5e6, 15e6)
    np.testing.assert_array_equal(sq.freqs[band], res.lower.freqs)
    assert np.max(np.abs(res.lower.values - sq.values[band])) < 0.5
    assert np.max(np.abs(res.upper.values - anti.values[band])) < 0.5


# ---- qumode scan --------------------------------------------------------------------

def test_qumode_scan_shape(paper_traces, paper_params):
    scan = analysis.qumode_scan(paper_traces, 1e6, 200e3, 2.5, paper_params.t_group)
    assert scan.spacings[0] == 0 and np.all(np.diff(scan.spacings) > 0)
    assert scan.covariances.shape == scan.standard_errors.shape == scan.spacings.shape
    assert scan.covariances[0] > 0 and np.argmax(scan.covariances) == 0
    assert np.all(np.abs(scan.z[scan.spacings >= 1]) < 3)
    k, resid = analysis.fit_triangle(scan)
    assert np.all(np.abs(resid) < 3)


def test_qumode_scan_vacuum(vacuum_traces):
    scan = analysis.qumode_scan(vacuum_traces, 1e6, 200e3, 2.0, 0.0)
    assert np.all(np.abs(scan.z) < 3)


def test_qumode_scan_invalid_bins(small_traces):
    with pytest.raises(PreconditionError):
        analysis.qumode_scan(small_traces, 0.05e6, 200e3)
    with pytest.raises(PreconditionError):
        analysis.qumode_scan(small_traces, 24.5e6, 200e3)
    with pytest.raises(PreconditionError):
        analysis.qumode_scan(small_traces, 1e6, 200e3, max_spacing=-1)


# ---- low-frequency spectra -------------------------------------------------------------

def test_lowfreq_rejects_short_records(small_traces):
    with pytest.raises(PreconditionError):
        analysis.lowfreq_spectrum(small_traces)


def test_lowfreq_vacuum_is_zero_db():
    p = paper_like().replace(r0=0.0, s_elec=0.0)
    ts = synthesize(p, 2**14 / 10, 2**14, seed=3, dark=False, reference="paired")
    spec = analysis.lowfreq_spectrum(ts)
    assert spec.resolution == pytest.approx(0.1)
    assert np.all(np.abs(spec.values[1:]) < 1e-9)


def test_highpass_rolloff_towards_shot(paper_params):
    p = paper_params.replace(f_hp=300e3)
    ts = synthesize(p, FS, 2**21, seed=17)
    spec = analysis.squeezing_spectrum(ts, t_extra=p.t_group, segment=4096)
    low = spec.values[spec.band(20e3, 60e3)]
    assert np.all(low > -1.5)
    mid = spec.band(1e6, 2e6)
    expected = 10 * np.log10(measured_ratio(p, spec.freqs[mid], p.t_group))
    assert np.mean(spec.values[mid]) == pytest.approx(np.mean(expected), abs=0.2)
    assert np.mean(spec.values[mid]) < np.mean(low) - 3


# ---- symmetry and monotonicity -----------------------------------------------------------

def test_quadrature_symmetry(paper_params):
    x = synthesize(paper_params, FS, 2**21, seed=41)
    p = synthesize(paper_params.replace(lock_quadrature=Quadrature.P), FS, 2**21, seed=42)
    t = paper_params.t_group
    sx = analysis.squeezing_spectrum(x, analysis.DIFFERENCE, t, True)
    sp = analysis.squeezing_spectrum(p, analysis.SUM, t, True)
    band = sx.band(0.1e6, 15e6)
    z = (sx.values - sp.values)[band] / np.hypot(sx.stderr, sp.stderr)[band]
    assert np.all(np.abs(z) < 5)
    ax = analysis.squeezing_spectrum(x, analysis.SUM, t, True)
    ap = analysis.squeezing_spectrum(p, analysis.DIFFERENCE, t, True)
    z = (ax.values - ap.values)[band] / np.hypot(ax.stderr, ap.stderr)[band]
    assert np.all(np.abs(z) < 5)


@pytest.mark.parametrize("change", [dict(eta_p=0.7, eta_c=0.7), dict(s_elec=0.3)])
def test_monotone_degradation(paper_params, change):
    t = paper_params.t_group
    base = synthesize(paper_params, FS, 2**21, seed=50, reference="paired")
    worse = synthesize(paper_params.replace(**change), FS, 2**21, seed=50, reference="paired")
    a = analysis.squeezing_spectrum(base, t_extra=t)
    b = analysis.squeezing_spectrum(worse, t_extra=t)
    band = a.band(0.1e6, 15e6)
    z = (b.values - a.values)[band] / np.hypot(a.stderr, b.stderr)[band]
    assert np.all(z > -3)
