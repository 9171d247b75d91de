import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tmsq import analysis
from tmsq.dsp import jackknife_ratio, psd_welch
from tmsq.errors import PreconditionError
from tmsq.model import Quadrature, SqueezerParams, highpass_gain, joint_variance, paper_like
from tmsq.synth import (
    CHANNELS,
    TraceSet,
    adc_step,
    params_from_meta,
    quantize,
    synthesize,
)

FS = 50e6


# ---- quantizer ---------------------------------------------------------------

def test_quantize_zero_and_saturation():
    out, clips = quantize(np.array([0.0]), 8, 8.0)
    assert out[0] == 0.0 and clips == 0
    out, clips = quantize(np.array([9.3]), 8, 8.0)
    assert out[0] == 8.0 and clips == 1
    out, clips = quantize(np.array([-9.3, 8.0]), 8, 8.0)
    assert list(out) == [-8.0, 8.0] and clips == 1


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=200), st.integers(2, 16),
       st.floats(0.5, 16))
def test_quantize_lattice_property(values, bits, fullscale):
    x = np.array(values)
    out, clips = quantize(x, bits, fullscale)
    step = adc_step(bits, fullscale)
    codes = out / step
    np.testing.assert_allclose(codes, np.rint(codes), atol=1e-9)
    assert np.all(np.abs(out) <= fullscale * (1 + 1e-12))
    inside = np.abs(x) <= fullscale
    assert np.all(np.abs(out - x)[inside] <= step / 2 * (1 + 1e-9))
    assert clips == int(np.sum(~inside))


def test_quantization_noise_psd():
    x = np.random.default_rng(2).standard_normal(2**20)
    q, _ = quantize(x, 8, 8.0)
    step = adc_step(8, 8.0)
    spec = psd_welch(q - x, FS, 1024)
    level = np.mean(spec.values[1:-1])
    assert level == pytest.approx(step**2 / 12 / (FS / 2), rel=0.05)


def test_quantize_rejects_bad_bits():
    with pytest.raises(PreconditionError):
        quantize(np.zeros(3), 1, 8.0)
    with pytest.raises(PreconditionError):
        quantize(np.zeros(3), 17, 8.0)


# ---- synthesize ----------------------------------------------------------------

def test_shot_normalisation():
    ts = synthesize(SqueezerParams(), FS, 2**20, seed=3)
    for name in ("probe", "conjugate", "vacuum_probe", "vacuum_conjugate"):
        assert np.var(getattr(ts, name)) == pytest.approx(1.0, abs=0.01)


def test_difference_psd_at_100khz(paper_traces, paper_params):
    d = analysis.combine(paper_traces.probe, paper_traces.conjugate, FS, analysis.DIFFERENCE)
    spec = psd_welch(d, FS, 1024)
    i = int(np.argmin(np.abs(spec.freqs - 100e3)))
    f = spec.freqs[i]
    step = float(paper_traces.meta["adc_step"])
    # the combined channel carries s_elec (not 2 s_elec) with the 1/sqrt(2) normalisation
    model = joint_variance(paper_params, f) + paper_params.s_elec + step**2 / 12
    measured = spec.values[i] / (2 / FS)
    assert 10 * math.log10(measured / model) == pytest.approx(0.0, abs=0.3)


def _trough(f, v, guess, half_width=0.8e6):
    """Parabolic trough location around the smallest value near ``guess``."""
    near = np.abs(f - guess) < 1.5e6
    i0 = np.flatnonzero(near)[np.argmin(v[near])]
    win = np.abs(f - f[i0]) <= half_width
    a, b, _ = np.polyfit(f[win] - f[i0], v[win], 2)
    return f[i0] - b / (2 * a)


def test_large_group_delay_minima_spacing():
    p = paper_like().replace(t_group=200e-9, s_elec=0.0, adc_bits=0)
    ts = synthesize(p, FS, 2**21, seed=4, dark=False, vacuum=False)
    d = analysis.combine(ts.probe, ts.conjugate, FS, analysis.DIFFERENCE)
    spec = psd_welch(d, FS, 1024)
    f, v = spec.freqs, spec.values / (2 / FS)
    band = (f >= 0.5e6) & (f <= 15e6)

    # the cos(2 pi f T) factor has period 1/T = 5 MHz
    a = joint_variance(p.replace(t_group=0.0), f[band], 0.0, "antisqueezed")
    s0 = joint_variance(p.replace(t_group=0.0), f[band])
    u = (0.5 * (a + s0) - v[band]) / (0.5 * (a - s0))
    periods = np.arange(4e6, 6e6, 1e3)
    score = [np.sum(u * np.cos(2 * np.pi * f[band] / P)) for P in periods]
    assert periods[int(np.argmax(score))] == pytest.approx(5e6, abs=spec.resolution)

    # the troughs themselves sit where the model puts them; the sloping
    # profile pulls them slightly below multiples of 5 MHz
    fine = np.arange(1e6, 14e6, 1e3)
    model = joint_variance(p, fine)
    for guess in (5e6, 10e6):
        expected = _trough(fine, model, guess)
        assert _trough(f, v, guess) == pytest.approx(expected, abs=spec.resolution)


def _expected_difference(p, f, step):
    q = step**2 / 12 if step else 0.0
    return highpass_gain(p, f) * joint_variance(p, f) + p.s_elec + q


@pytest.mark.parametrize("quad", [Quadrature.X, Quadrature.P])
def test_statistical_fidelity(quad):
    p = paper_like().replace(f_hp=300e3, lock_quadrature=quad)
    ts = synthesize(p, FS, 2**20, seed=8, dark=False, vacuum=False)
    mode = analysis.DIFFERENCE if quad is Quadrature.X else analysis.SUM
    x = analysis.combine(ts.probe, ts.conjugate, FS, mode)
    spec = psd_welch(x, FS, 1024)
    band = (spec.freqs > p.f_hp) & (spec.freqs < 0.4 * FS)
    expected = _expected_difference(p, spec.freqs[band], adc_step(8, 8.0)) * (2 / FS)
    z = (spec.values[band] - expected) / spec.stderr[band]
    assert np.all(np.abs(z) < 5)


def test_sum_and_difference_independent():
    p = paper_like().replace(t_group=0.0, s_elec=0.0, adc_bits=0)
    ts = synthesize(p, FS, 2**20, seed=9, dark=False, vacuum=False)
    s = (ts.probe + ts.conjugate) / math.sqrt(2)
    d = (ts.probe - ts.conjugate) / math.sqrt(2)
    prod = (s * d).reshape(64, -1).sum(axis=1)
    est, se = jackknife_ratio(prod, np.full(64, ts.n / 64))
    assert abs(est / se) < 4


def test_parseval_pre_quantization():
    p = paper_like().replace(adc_bits=0)
    ts = synthesize(p, FS, 2**20, seed=10, dark=False, vacuum=False)
    for x in (ts.probe, ts.conjugate):
        spec = psd_welch(x, FS, ts.n, "rectangular", 0.0)
        assert np.sum(spec.values) * spec.resolution == pytest.approx(np.var(x), rel=1e-3)


def test_deterministic_and_thread_independent():
    p = paper_like()
    a = synthesize(p, FS, 2**17, seed=21)
    b = synthesize(p, FS, 2**17, seed=21, threads=3)
    c = synthesize(p, FS, 2**17, seed=22)
    assert a.equals(b)
    assert a.equals(synthesize(p, FS, 2**17, seed=21))
    assert not np.array_equal(a.probe, c.probe)


def test_reference_records():
    p = paper_like().replace(adc_bits=0, s_elec=0.1)
    ts = synthesize(p, FS, 2**20, seed=12)
    assert set(ts.channels()) == set(CHANNELS)
    v = analysis.combine(ts.vacuum_probe, ts.vacuum_conjugate, FS, analysis.DIFFERENCE)
    assert np.var(v) == pytest.approx(1.1, rel=0.01)
    assert np.var(ts.dark_probe) == pytest.approx(0.1, rel=0.01)
    # dark records share the electronic noise streams of the signal record
    assert not np.array_equal(ts.dark_probe, ts.dark_conjugate)


def test_paired_reference_reuses_quantum_draws():
    p = paper_like().replace(adc_bits=0, s_elec=0.0, t_group=0.0)
    ts = synthesize(p, FS, 2**16, seed=13, reference="paired", dark=False)
    d = np.fft.rfft(ts.probe - ts.conjugate)
    v = np.fft.rfft(ts.vacuum_probe - ts.vacuum_conjugate)
    f = np.fft.rfftfreq(ts.n, 1 / FS)
    ratio = np.abs(d[1:-1]) ** 2 / np.abs(v[1:-1]) ** 2
    np.testing.assert_allclose(ratio, joint_variance(p, f[1:-1]), rtol=1e-9)


def test_meta_round_trips_params():
    p = paper_like().replace(lock_quadrature=Quadrature.P, f_hp=123.0)
    ts = synthesize(p, FS, 2**14, seed=1, dark=False, vacuum=False)
    assert params_from_meta(ts.meta) == p
    assert ts.meta["seed"] == "1" and ts.meta["quadrature"] == "P"
    assert ts.meta["params_digest"] == p.digest()


@pytest.mark.parametrize("fs, n", [(FS, 3 * 2**14), (FS, 2**13), (0.0, 2**14), (-1.0, 2**14)])
def test_acquisition_rejected(fs, n):
    with pytest.raises(PreconditionError):
        synthesize(paper_like(), fs, n, seed=0)


def test_traceset_channel_lengths_must_agree():
    with pytest.raises(ValueError):
        TraceSet(FS, np.zeros(4), np.zeros(5))
    with pytest.raises(PreconditionError):
        TraceSet(0.0, np.zeros(4), np.zeros(4))
