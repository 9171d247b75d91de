"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 precondition failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import analysis, config, figures, store
from .errors import DataError, PreconditionError
from .synth import params_from_meta, synthesize

EXIT_USAGE, EXIT_DATA, EXIT_PRECONDITION = 2, 3, 4


class UsageError(Exception):
    pass


def _pair(text: str, scale: float = 1.0):
    try:
        lo, hi = (float(v) * scale for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected two comma-separated numbers, got {text!r}") from None
    return lo, hi


def _file_values(args) -> dict:
    path = args.config or os.environ.get(config.ENV_VAR)
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return config.parse(text, str(path))


def _flag_values(args) -> dict:
    values = config.parse_assignments(args.set or [])
    if getattr(args, "fs", None) is not None:
        values["fs"] = args.fs
    if getattr(args, "n", None) is not None:
        values["n"] = args.n
    return values


def _load(args) -> config.Config:
    return config.layered(config.preset_values(), _file_values(args), _flag_values(args))


def _read(path):
    try:
        return store.read_traces(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None


def _trace_meta(traces) -> dict:
    return dict(traces.meta)


def cmd_synth(args):
    cfg = _load(args)
    traces = synthesize(cfg.params, cfg.fs, cfg.n, args.seed, threads=args.threads,
                        reference=cfg.reference)
    traces.meta.update(cfg.echo())
    size = store.write_traces(args.out, traces)
    print(f"synth: wrote {args.out} ({size} bytes, fs={cfg.fs:g} Hz, n={cfg.n}, "
          f"seed={args.seed})")


def cmd_spectrum(args):
    traces = _read(args.input)
    t_extra = args.delay_ns * 1e-9
    spec = analysis.squeezing_spectrum(traces, args.mode, t_extra, args.subtract_dark,
                                       segment=args.segment, method=args.method)
    meta = _trace_meta(traces)
    meta.update(spec.meta)
    store.write_spectrum_csv(args.out, spec, meta)
    band = spec.band(0.5e6, min(15e6, 0.5 * traces.fs))
    low = spec.values[band & spec.valid]
    print(f"spectrum: wrote {args.out} ({len(spec)} bins, mode={args.mode}, "
          f"delay_ns={args.delay_ns:g}, min_db={low.min() if low.size else float('nan'):.3f})")


def cmd_delayscan(args):
    traces = _read(args.input)
    band = _pair(args.band)
    window = _pair(args.window, 1e-9)
    res = analysis.optimize_delay(traces, band, window, args.mode,
                                  subtract_dark=args.subtract_dark)
    meta = _trace_meta(traces)
    meta.update({"best_delay_s": repr(res.best_delay),
                 "best_objective_db": repr(res.best_objective)})
    store.write_spectrum_csv(args.out, res, meta)
    print(f"delayscan: best_delay_ns={res.best_delay * 1e9:.3f} "
          f"objective_db={res.best_objective:.4f}")


def _auto_delay(traces):
    band = (0.5e6, min(15e6, 0.4 * traces.fs))
    return analysis.optimize_delay(traces, band).best_delay


def cmd_binscan(args):
    traces = _read(args.input)
    if args.delay_ns == "auto":
        t_extra = _auto_delay(traces) if traces.has_vacuum else \
            params_from_meta(traces.meta).t_group
    else:
        try:
            t_extra = float(args.delay_ns) * 1e-9
        except ValueError:
            raise UsageError(f"--delay-ns expects a number or 'auto', got {args.delay_ns!r}")
    scan = analysis.qumode_scan(traces, args.probe_center, args.bin_width, args.max_spacing,
                                t_extra, spacing_step=args.spacing_step)
    meta = _trace_meta(traces)
    meta.update({"bin_width": repr(args.bin_width), "probe_center": repr(args.probe_center),
                 "t_extra": repr(t_extra)})
    store.write_spectrum_csv(args.out, scan, meta)
    beyond = scan.z[scan.spacings > 1]
    zmax = abs(beyond).max() if beyond.size else float("nan")
    print(f"binscan: wrote {args.out} ({scan.spacings.size} spacings, "
          f"cov0={scan.covariances[0]:.4f}, max_abs_z_beyond_1={zmax:.2f})")


def cmd_lowfreq(args):
    traces = _read(args.input)
    spec = analysis.lowfreq_spectrum(traces, t_extra=args.delay_ns * 1e-9)
    keep = (spec.freqs > 0) & (spec.freqs <= args.max_freq)
    meta = _trace_meta(traces)
    meta.update(spec.meta)
    store.write_spectrum_csv(args.out, spec.select(keep), meta)
    below = spec.values[(spec.freqs > 0) & (spec.freqs < 1.0)]
    print(f"lowfreq: wrote {args.out} (resolution={spec.resolution:g} Hz, "
          f"max_db_below_1hz={below.max() if below.size else float('nan'):.3f})")


def cmd_figure(args):
    cfg = figures.figure_config(args.name, _file_values(args), _flag_values(args))
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    curves, summary, traces = figures.FIGURES[args.name](cfg, args.seed, args.threads)
    meta = {"figure": args.name, "seed": str(args.seed)}
    meta.update(cfg.echo())
    for name, obj in curves.items():
        store.write_spectrum_csv(outdir / f"{args.name}_{name}.csv", obj,
                                 dict(meta, curve=name))
    if args.save_traces:
        traces.meta.update(cfg.echo())
        store.write_traces(outdir / f"{args.name}_traces.tmsq", traces)
    text = " ".join(f"{k}={v:.4g}" for k, v in summary.items())
    print(f"{args.name}: wrote {len(curves)} curves to {outdir} {text}".rstrip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"key=value config file (default ${config.ENV_VAR})")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads; results do not depend on it")

    p = argparse.ArgumentParser(prog="tmsq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="synthesize and store a trace set")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fs", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("spectrum", parents=[common], help="squeezing spectrum in dB rel. shot")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--mode", choices=(analysis.DIFFERENCE, analysis.SUM),
                   default=analysis.DIFFERENCE)
    s.add_argument("--delay-ns", type=float, default=0.0)
    s.add_argument("--subtract-dark", action="store_true")
    s.add_argument("--segment", type=int, default=analysis.DEFAULT_SEGMENT)
    s.add_argument("--method", choices=("welch", "autocorr"), default="welch")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("delayscan", parents=[common], help="optimum conjugate delay search")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--band", default="0.5e6,15e6", help="f_lo,f_hi in Hz")
    s.add_argument("--window", default="-30,30", help="search window lo,hi in ns")
    s.add_argument("--mode", choices=(analysis.DIFFERENCE, analysis.SUM),
                   default=analysis.DIFFERENCE)
    s.add_argument("--subtract-dark", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_delayscan)

    s = sub.add_parser("binscan", parents=[common], help="frequency-bin covariance scan")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--probe-center", type=float, default=1e6)
    s.add_argument("--bin-width", type=float, default=200e3)
    s.add_argument("--max-spacing", type=float, default=2.5)
    s.add_argument("--spacing-step", type=float, default=0.25)
    s.add_argument("--delay-ns", default="auto")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_binscan)

    s = sub.add_parser("lowfreq", parents=[common], help="sub-Hz spectrum, single transform")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--delay-ns", type=float, default=0.0)
    s.add_argument("--max-freq", type=float, default=figures.FIG4_MAX_FREQ)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_lowfreq)

    s = sub.add_parser("figure", parents=[common], help="end-to-end figure reproduction")
    s.add_argument("name", choices=sorted(figures.FIGURES))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--outdir", default=".")
    s.add_argument("--save-traces", action="store_true")
    s.set_defaults(func=cmd_figure)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
    except (UsageError, config.ConfigError) as exc:
        print(f"tmsq: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PreconditionError as exc:
        print(f"tmsq: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except DataError as exc:
        print(f"tmsq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"tmsq: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
