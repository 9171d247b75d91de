"""Binary trace container and CSV emitters.

Trace file layout (all little-endian)::

    offset  size  field
    0       4     magic b"TMSQ"
    4       2     version (uint16, currently 1)
    6       1     channel_count (uint8)
    7       1     sample_format (uint8): 1 float64, 2 float32, 3 int16 ADC codes
    8       8     fs in Hz (float64)
    16      8     n samples per channel (uint64)
    24      4     meta_len (uint32)
    28      ...   meta_len bytes of UTF-8 "key=value" lines
    ...           channel_count * n samples, planar, canonical channel order

The metadata always carries ``channels`` (present channels, in order) and
``absent`` (omitted ones).  Format 3 stores ``round(x / adc_step)`` and
requires ``adc_step`` in the metadata.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .dsp import Spectrum
from .errors import (
    BadMagicError,
    ChannelMismatchError,
    DataError,
    TraceFileError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .synth import CHANNELS, TraceSet

MAGIC = b"TMSQ"
VERSION = 1
HEADER = struct.Struct("<4sHBBdQI")

FLOAT64, FLOAT32, INT16 = 1, 2, 3
_DTYPES = {FLOAT64: np.dtype("<f8"), FLOAT32: np.dtype("<f4"), INT16: np.dtype("<i2")}
_RESERVED = ("channels", "absent")


def _atomic_write(path, data: bytes) -> int:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return len(data)


def _encode_meta(meta: dict) -> bytes:
    lines = []
    for key, value in meta.items():
        key, value = str(key), str(value)
        if not key or "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"metadata entry {key!r} cannot be stored as a key=value line")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def _decode_meta(raw: bytes) -> dict:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceFileError(f"metadata is not valid UTF-8: {exc}") from None
    meta = {}
    for line in text.split("\n"):
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise TraceFileError(f"malformed metadata line {line!r}")
        meta[key] = value
    return meta


def _pick_format(channels: dict, meta: dict) -> int:
    dtypes = {a.dtype for a in channels.values()}
    if dtypes == {np.dtype(np.float32)}:
        return FLOAT32
    if "adc_step" in meta:
        step = float(meta["adc_step"])
        ok = all(
            np.array_equal(np.rint(a / step) * step, a) and np.all(np.abs(a / step) < 2**15)
            for a in channels.values()
        )
        if ok:
            return INT16
    return FLOAT64


def encode_traces(traces: TraceSet, sample_format: int | None = None) -> bytes:
    """Serialise a TraceSet to the container format."""
    channels = traces.channels()
    for key in _RESERVED:
        if key in traces.meta:
            raise ValueError(f"metadata key {key!r} is reserved")
    fmt = sample_format or _pick_format(channels, traces.meta)
    if fmt not in _DTYPES:
        raise ValueError(f"unknown sample format {fmt}")
    meta = dict(traces.meta)
    meta["channels"] = ",".join(channels)
    meta["absent"] = ",".join(k for k in CHANNELS if k not in channels)
    meta_bytes = _encode_meta(meta)
    dtype = _DTYPES[fmt]
    out = io.BytesIO()
    out.write(HEADER.pack(MAGIC, VERSION, len(channels), fmt, float(traces.fs),
                          traces.n, len(meta_bytes)))
    out.write(meta_bytes)
    for name, arr in channels.items():
        if fmt == INT16:
            if "adc_step" not in traces.meta:
                raise ValueError("format 3 requires adc_step in the metadata")
            step = float(traces.meta["adc_step"])
            codes = np.rint(arr / step)
            if not np.array_equal(codes * step, arr):
                raise ValueError(f"channel {name} is not on the ADC lattice")
            out.write(codes.astype(dtype).tobytes())
        else:
            out.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return out.getvalue()


def write_traces(path, traces: TraceSet, sample_format: int | None = None) -> int:
    """Write ``traces`` atomically; returns the number of bytes written.

    Without ``sample_format`` the smallest lossless format is chosen.
    """
    return _atomic_write(path, encode_traces(traces, sample_format))


def decode_traces(data: bytes) -> TraceSet:
    if len(data) >= len(MAGIC) and data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(data) < HEADER.size:
        raise TruncatedFileError(f"file holds {len(data)} bytes, header needs {HEADER.size}")
    _, version, count, fmt, fs, n, meta_len = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    if fmt not in _DTYPES:
        raise TraceFileError(f"unknown sample format code {fmt}")
    meta_end = HEADER.size + meta_len
    if len(data) < meta_end:
        raise TruncatedFileError("file ends inside the metadata block")
    meta = _decode_meta(data[HEADER.size:meta_end])
    names = [c for c in meta.pop("channels", "").split(",") if c]
    meta.pop("absent", None)
    if len(names) != count or any(c not in CHANNELS for c in names) \
            or names != [c for c in CHANNELS if c in names]:
        raise ChannelMismatchError(
            f"header declares {count} channels, metadata lists {names}"
        )
    if "probe" not in names or "conjugate" not in names:
        raise ChannelMismatchError("probe and conjugate channels are required")
    dtype = _DTYPES[fmt]
    payload = count * n * dtype.itemsize
    if len(data) - meta_end < payload:
        raise TruncatedFileError(
            f"payload holds {len(data) - meta_end} bytes, expected {payload}"
        )
    if len(data) - meta_end > payload:
        raise TraceFileError(f"{len(data) - meta_end - payload} unexpected trailing bytes")
    arrays = {}
    step = float(meta["adc_step"]) if fmt == INT16 and "adc_step" in meta else None
    for i, name in enumerate(names):
        start = meta_end + i * n * dtype.itemsize
        arr = np.frombuffer(data, dtype=dtype, count=n, offset=start)
        if fmt == INT16:
            arr = arr.astype(np.float64) * step if step is not None else arr.astype(np.int16)
        else:
            arr = arr.astype(dtype.newbyteorder("="))
        arrays[name] = arr
    if fs <= 0:
        raise TraceFileError(f"invalid sample rate {fs}")
    return TraceSet(fs=fs, meta=meta, **arrays)


def read_traces(path) -> TraceSet:
    with open(path, "rb") as fh:
        return decode_traces(fh.read())


def _fmt(v) -> str:
    return repr(float(v))


def spectrum_rows(obj):
    """Header and rows for a Spectrum, DelayScanResult or CovarianceScan."""
    from .analysis import CovarianceScan, DelayScanResult

    if isinstance(obj, Spectrum):
        if np.iscomplexobj(obj.values):
            raise TypeError("complex spectra cannot be written as CSV")
        header = ["frequency_hz", "value", "unit"]
        if obj.stderr is not None:
            header.append("stderr")
        header.append("valid")
        rows = []
        for i in range(len(obj)):
            row = [_fmt(obj.freqs[i]), _fmt(obj.values[i]), obj.unit]
            if obj.stderr is not None:
                row.append(_fmt(obj.stderr[i]))
            row.append("1" if obj.valid[i] else "0")
            rows.append(row)
        return header, rows
    if isinstance(obj, DelayScanResult):
        header = ["delay_s", "value", "unit"]
        rows = [[_fmt(t), _fmt(v), "dB-rel-shot"] for t, v in zip(obj.delays, obj.objective)]
        return header, rows
    if isinstance(obj, CovarianceScan):
        header = ["spacing", "value", "unit", "stderr"]
        rows = [[_fmt(s), _fmt(v), "shot", _fmt(e)]
                for s, v, e in zip(obj.spacings, obj.covariances, obj.standard_errors)]
        return header, rows
    raise TypeError(f"cannot write {type(obj).__name__} as CSV")


def encode_csv(obj, meta: dict | None = None) -> bytes:
    header, rows = spectrum_rows(obj)
    buf = io.StringIO(newline="")
    for key, value in (meta or {}).items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def write_spectrum_csv(path, obj, meta: dict | None = None) -> int:
    """Write a spectrum or scan as CSV; returns the byte count.

    Leading ``# key=value`` lines carry ``meta``.  Numbers use the shortest
    repr that round-trips the float64 value.
    """
    try:
        return _atomic_write(path, encode_csv(obj, meta))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path):
    """Parse a CSV written by :func:`write_spectrum_csv`.

    Returns ``(meta, columns)`` where numeric columns are float arrays.
    """
    meta, lines = {}, []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\n").partition("=")
                meta[key] = value
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    cols = {h: [] for h in header}
    for row in reader:
        for h, v in zip(header, row):
            cols[h].append(v)
    out = {}
    for h, vals in cols.items():
        out[h] = vals if h == "unit" else np.array([float(v) for v in vals])
    return meta, out
