"""Synthesis of sampled dual-homodyne records from the analytic model.

The locked sum and difference quadratures are generated independently in
the frequency domain with the model's anti-squeezed and squeezed spectra,
rotated into probe and conjugate channels, delayed, high-passed, given
electronic noise and finally quantized.

Random numbers come from counter-based Philox streams keyed by
``(seed, record, role, block)``, so the output does not depend on how many
worker threads draw the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .model import Branch, Quadrature, SqueezerParams, joint_variance

CHANNELS = (
    "probe", "conjugate",
    "dark_probe", "dark_conjugate",
    "vacuum_probe", "vacuum_conjugate",
)

# stream keys
_SIGNAL, _VACUUM, _DARK = 0, 1, 2
_SUM, _DIFF, _ELEC_P, _ELEC_C = 0, 1, 2, 3

BLOCK = 1 << 16


@dataclass(eq=False)
class TraceSet:
    """Synchronised probe/conjugate records plus optional reference records.

    Samples are in units of the shot-noise standard deviation.  Quantized
    records hold values on the ADC lattice ``code * adc_step``; the step is
    kept in ``meta["adc_step"]``.
    """

    fs: float
    probe: np.ndarray
    conjugate: np.ndarray
    dark_probe: np.ndarray | None = None
    dark_conjugate: np.ndarray | None = None
    vacuum_probe: np.ndarray | None = None
    vacuum_conjugate: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.fs > 0:
            raise PreconditionError(f"fs must be > 0, got {self.fs}")
        n = None
        for name in CHANNELS:
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr)
            setattr(self, name, arr)
            if arr.ndim != 1:
                raise ValueError(f"channel {name} must be one-dimensional")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValueError(f"channel {name} has {arr.size} samples, expected {n}")

    @property
    def n(self) -> int:
        return self.probe.size

    @property
    def duration(self) -> float:
        return self.n / self.fs

    def channels(self) -> dict:
        """Present channels in canonical order."""
        return {k: getattr(self, k) for k in CHANNELS if getattr(self, k) is not None}

    @property
    def has_dark(self) -> bool:
        return self.dark_probe is not None and self.dark_conjugate is not None

    @property
    def has_vacuum(self) -> bool:
        return self.vacuum_probe is not None and self.vacuum_conjugate is not None

    def equals(self, other: "TraceSet") -> bool:
        """Bit-exact comparison of sample data, rate and metadata."""
        if self.fs != other.fs or self.meta != other.meta:
            return False
        a, b = self.channels(), other.channels()
        if a.keys() != b.keys():
            return False
        return all(
            x.dtype == b[k].dtype and x.tobytes() == b[k].tobytes() for k, x in a.items()
        )


def quantize(samples, bits: int, fullscale: float):
    """Mid-tread uniform quantizer with saturation.

    The lattice is ``k * step`` for ``|k| <= 2**(bits-1) - 1`` with
    ``step = fullscale / (2**(bits-1) - 1)``, so zero and ``+/-fullscale``
    are both representable.  Returns ``(quantized, clip_count)``.
    """
    if not 2 <= bits <= 16:
        raise PreconditionError(f"bits must lie in [2, 16], got {bits}")
    if not fullscale > 0:
        raise PreconditionError(f"fullscale must be > 0, got {fullscale}")
    x = np.asarray(samples, dtype=float)
    top = 2 ** (bits - 1) - 1
    step = fullscale / top
    clips = int(np.count_nonzero(np.abs(x) > fullscale))
    # "+ 0.0" folds negative zero onto the lattice point 0 so codes round-trip bit-exactly
    codes = np.clip(np.rint(x / step), -top, top) + 0.0
    return codes * step, clips


def adc_step(bits: int, fullscale: float) -> float:
    return fullscale / (2 ** (bits - 1) - 1)


def _stream(seed: int, record: int, role: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed & (2**64 - 1), spawn_key=(record, role, block))
    return np.random.Generator(np.random.Philox(ss))


def _normals(seed, record, role, size, pool, complex_=False):
    """Standard normals of length ``size`` assembled from per-block streams."""
    out = np.empty(size, dtype=complex if complex_ else float)
    starts = range(0, size, BLOCK)

    def fill(i_start):
        i, start = i_start
        stop = min(start + BLOCK, size)
        g = _stream(seed, record, role, i)
        if complex_:
            z = g.standard_normal(2 * (stop - start))
            out[start:stop] = (z[0::2] + 1j * z[1::2]) * math.sqrt(0.5)
        else:
            out[start:stop] = g.standard_normal(stop - start)

    if pool is None:
        for item in enumerate(starts):
            fill(item)
    else:
        list(pool.map(fill, enumerate(starts)))
    return out


def _shaped(seed, record, role, psd, n, pool):
    """rfft coefficients of a stationary record with one-sided PSD ``2 psd / fs``."""
    z = _normals(seed, record, role, psd.size, pool, complex_=True)
    z *= np.sqrt(n * psd)
    z[0] = 0
    if n % 2 == 0:
        z[-1] = 0
    return z


def _check_acquisition(fs, n):
    if not fs > 0:
        raise PreconditionError(f"fs must be > 0, got {fs}")
    if n < 2**14 or n & (n - 1):
        raise PreconditionError(f"n must be a power of two >= 2**14, got {n}")


def synthesize(params: SqueezerParams, fs: float, n: int, seed: int, *,
               threads: int = 1, reference: str = "independent",
               dark: bool = True, vacuum: bool = True) -> TraceSet:
    """Synthesize a :class:`TraceSet` with the model's second-order statistics.

    Parameters
    ----------
    params : SqueezerParams
    fs : float
        Sample rate in Hz.
    n : int
        Samples per channel, a power of two >= 2**14.
    seed : int
        Master seed; all randomness derives from it.
    threads : int
        Worker threads for drawing random blocks; does not change the output.
    reference : {"independent", "paired"}
        ``"independent"`` draws the vacuum reference from its own streams,
        as a separate measurement would.  ``"paired"`` reuses the signal's
        quantum draws (common random numbers), which removes the
        per-bin scatter of the signal/shot ratio.
    dark, vacuum : bool
        Whether to include electronic-noise-only and vacuum-reference records.
    """
    _check_acquisition(fs, n)
    if reference not in ("independent", "paired"):
        raise ValueError(f"reference must be 'independent' or 'paired', got {reference!r}")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    f = np.fft.rfftfreq(n, 1 / fs)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        compensated = params.replace(t_group=0.0)
        v_sq = joint_variance(compensated, f, 0.0, Branch.SQUEEZED)
        v_anti = joint_variance(compensated, f, 0.0, Branch.ANTISQUEEZED)
        if params.lock_quadrature is Quadrature.P:
            v_sum, v_diff = v_sq, v_anti
        else:
            v_sum, v_diff = v_anti, v_sq

        delay = np.exp(-2j * np.pi * f * params.t_group)
        if params.f_hp > 0:
            jf = 1j * f / params.f_hp
            hp = jf / (1 + jf)
        else:
            hp = None

        step = adc_step(params.adc_bits, params.adc_fullscale) if params.adc_bits else None
        clips = {}

        def finish(spec, record, role, name):
            if hp is not None:
                spec *= hp
            x = np.fft.irfft(spec, n=n)
            if params.s_elec > 0:
                x += math.sqrt(params.s_elec) * _normals(seed, record, role, n, pool)
            if step is not None:
                x, clips[name] = quantize(x, params.adc_bits, params.adc_fullscale)
            return x

        def homodyne_pair(record, quantum_record, shot_only):
            ones = np.ones_like(f)
            s = _shaped(seed, quantum_record, _SUM, ones if shot_only else v_sum, n, pool)
            d = _shaped(seed, quantum_record, _DIFF, ones if shot_only else v_diff, n, pool)
            p_spec = (s + d) * (delay / math.sqrt(2))
            c_spec = (s - d) / math.sqrt(2)
            del s, d
            prefix = "vacuum_" if record == _VACUUM else ""
            p = finish(p_spec, record, _ELEC_P, prefix + "probe")
            c = finish(c_spec, record, _ELEC_C, prefix + "conjugate")
            return p, c

        probe, conj = homodyne_pair(_SIGNAL, _SIGNAL, params.r0 == 0)
        out = TraceSet(fs, probe, conj)
        if vacuum:
            q = _SIGNAL if reference == "paired" else _VACUUM
            out.vacuum_probe, out.vacuum_conjugate = homodyne_pair(_VACUUM, q, True)
        if dark:
            for name, role in (("dark_probe", _ELEC_P), ("dark_conjugate", _ELEC_C)):
                x = math.sqrt(params.s_elec) * _normals(seed, _DARK, role, n, pool)
                if step is not None:
                    x, clips[name] = quantize(x, params.adc_bits, params.adc_fullscale)
                setattr(out, name, x)
    finally:
        if pool is not None:
            pool.shutdown()

    out.meta = {
        "seed": str(seed),
        "params_digest": params.digest(),
        "quadrature": params.lock_quadrature.value,
        "reference": reference,
    }
    for k, v in params.as_dict().items():
        out.meta[f"param.{k}"] = repr(v) if isinstance(v, float) else str(v)
    if step is not None:
        out.meta["adc_step"] = repr(step)
        out.meta["clips"] = ",".join(f"{k}:{v}" for k, v in clips.items())
    return out


def params_from_meta(meta: dict) -> SqueezerParams:
    """Rebuild the generating parameters recorded in a TraceSet's metadata."""
    fields = SqueezerParams.__dataclass_fields__
    kwargs = {}
    for key, value in meta.items():
        if not key.startswith("param."):
            continue
        name = key[len("param."):]
        if name not in fields:
            continue
        if name == "lock_quadrature":
            kwargs[name] = Quadrature(value)
        elif name in ("adc_bits", "profile_order"):
            kwargs[name] = int(value)
        else:
            kwargs[name] = float(value)
    return SqueezerParams(**kwargs)
