"""Command-line front end.

    dfig simulate --scenario scenario1 --out ./run1
    dfig simulate --config my_run.json --out ./run2 --no-svg --decimate 10
    dfig analyze hessian-check --trials 200
    dfig analyze critical-root --beta-grid 0,5,10 --vw-grid 0.6,0.8,1.0
    dfig analyze cp-contour --out cp.csv
    dfig analyze place --poles=-15,-5,-10+5i,-10-5i
    dfig analyze grid-min --vw 0.8 --pd 0.9 --qd 0.09

Exit codes: 0 ok, 1 configuration error, 2 simulation abort, 3 I/O error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .analysis import cp_table, critical_root_table, grid_argmin, hessian_sweep
from .config import SEED_ENV, ConfigError, OutputOptions, RunConfig, load_config
from .controller import DEFAULT_POLES, closed_loop_matrix, synthesize
from .io import format_value, svg_line_chart, write_svg, write_timeseries_csv
from .numerics import NumericsError, eig4, match_spectra
from .plant import NOMINAL_CP_COEFFS, PlantParams
from .scenarios import BUILTIN, DEGRADED_CP_COEFFS, builtin, steady_windows
from .sim import SimulationAbort, TimeSeries, metrics, run_closed_loop

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_ABORT", "EXIT_IO"]

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_IO = 0, 1, 2, 3

# charts written next to the CSV: file suffix -> (title, columns)
CHARTS = {
    "power": ("Active and reactive power [pu]", ("p", "p_d", "q", "q_d")),
    "cp": ("Power coefficient", ("cp",)),
    "speed": ("Rotor speed and setpoint [pu]", ("omega_r", "omega_rd")),
    "pitch": ("Pitch angle [deg]", ("beta",)),
    "pf": ("Power factor", ("pf",)),
    "wind": ("Wind speed [pu]", ("v_w_true", "v_w_meas")),
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # bad flags are configuration errors, not argparse's default exit 2
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _poles(text: str) -> tuple:
    try:
        poles = tuple(complex(v.strip().replace("i", "j")) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot read poles {text!r}") from None
    if len(poles) != 4:
        raise argparse.ArgumentTypeError("expected 4 poles")
    return poles


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dfig", description="Dual-mode DFIG wind turbine controller simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario and write CSV/SVG outputs")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=sorted(BUILTIN))
    src.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, required=True, help="output directory (created if missing)")
    s.add_argument("--no-svg", action="store_true")
    s.add_argument("--no-csv", action="store_true")
    s.add_argument("--decimate", type=_positive_int, default=None, help="keep every n-th recorded sample")
    s.add_argument("--paper-scale", action="store_true", help="3600 s horizons for built-in scenarios")
    s.add_argument("--seed", type=int, default=None)

    a = sub.add_parser("analyze", help="offline checks and tables")
    asub = a.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    h = asub.add_parser("hessian-check", help="torque-Hessian definiteness over random gains and machines")
    h.add_argument("--trials", type=_positive_int, default=200)
    h.add_argument("--seed", type=int, default=0)
    c = asub.add_parser("critical-root", help="first zero of the speed-loop headroom over a grid")
    c.add_argument("--beta-grid", type=_floats, default=[0.0, 5.0, 10.0])
    c.add_argument("--vw-grid", type=_floats, default=[0.6, 0.8, 1.0])
    c.add_argument("--out", type=Path)
    cc = asub.add_parser("cp-contour", help="Cp grid for the nominal and degraded coefficient sets")
    cc.add_argument("--lambda-points", type=_positive_int, default=131)
    cc.add_argument("--beta-points", type=_positive_int, default=31)
    cc.add_argument("--out", type=Path)
    pl = asub.add_parser("place", help="design a gain and report the achieved spectrum")
    pl.add_argument("--poles", type=_poles, default=DEFAULT_POLES)
    g = asub.add_parser("grid-min", help="brute-force minimizer of the tracking objective")
    g.add_argument("--vw", type=float, required=True)
    g.add_argument("--pd", type=float, required=True)
    g.add_argument("--qd", type=float, required=True)
    return p


def _write_text_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".part")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _table_text(header, rows) -> str:
    lines = [",".join(header)] + [",".join(format_value(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _emit_table(header, rows, out: Path | None, stdout) -> None:
    text = _table_text(header, rows)
    if out is None:
        stdout.write(text)
    else:
        _write_text_atomic(out, text)
        print(f"wrote {out}", file=stdout)


def _decimate(ts: TimeSeries, n: int) -> TimeSeries:
    if n == 1:
        return ts
    out = TimeSeries(ts.data[::n], ts.name)
    out.final_state = ts.final_state
    return out


def _run_config(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
        if args.paper_scale:
            raise ConfigError("--paper-scale", "only applies to built-in scenarios; set paper_scale in the config")
    else:
        seed = os.environ.get(SEED_ENV)
        overrides = {}
        if seed:
            try:
                overrides["seed"] = int(seed)
            except ValueError:
                raise ConfigError(SEED_ENV, f"not an integer: {seed!r}") from None
        cfg = RunConfig(builtin(args.scenario, paper_scale=args.paper_scale, **overrides))
    out = cfg.output
    out = OutputOptions(
        csv=out.csv and not args.no_csv,
        svg=out.svg and not args.no_svg,
        decimate=args.decimate if args.decimate is not None else out.decimate,
    )
    spec = cfg.spec
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be nonnegative")
        spec = spec.scaled(seed=args.seed)
    return RunConfig(spec, out)


def cmd_simulate(args, stdout, stderr) -> int:
    try:
        cfg = _run_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    spec = cfg.spec

    try:
        args.out.mkdir(parents=True, exist_ok=True)
        if not os.access(args.out, os.W_OK):
            raise PermissionError(f"{args.out} is not writable")
    except OSError as exc:
        print(f"I/O error: {exc}", file=stderr)
        return EXIT_IO

    try:
        ts = run_closed_loop(spec)
    except SimulationAbort as exc:
        print(f"simulation aborted: {exc}", file=stderr)
        return EXIT_ABORT
    except NumericsError as exc:
        print(f"simulation aborted: controller synthesis failed: {exc}", file=stderr)
        return EXIT_ABORT

    # metrics come from the full-rate record; decimation only thins the files
    stats = metrics(ts, steady_windows(spec))
    out_ts = _decimate(ts, cfg.output.decimate)
    try:
        if cfg.output.csv:
            path = write_timeseries_csv(out_ts, args.out / f"{spec.name}_timeseries.csv")
            print(f"wrote {path}", file=stdout)
        if cfg.output.svg:
            for suffix, (title, cols) in CHARTS.items():
                svg = svg_line_chart(out_ts["t"], {c: out_ts[c] for c in cols}, title=f"{spec.name}: {title}")
                path = write_svg(args.out / f"{spec.name}_{suffix}.svg", svg)
                print(f"wrote {path}", file=stdout)
    except OSError as exc:
        print(f"I/O error: {exc}", file=stderr)
        return EXIT_IO

    print(f"{spec.name}: {len(ts)} samples over {spec.duration:g} s", file=stdout)
    print("window [s]          cp_mean   pf_mean   |P-Pd|/Pd  beta_mean", file=stdout)
    for s in stats:
        print(
            f"{s.t0:8.1f}-{s.t1:<8.1f}  {s.cp_mean:8.4f}  {s.pf_mean:8.4f}  {s.p_rel_err_mean:9.4f}  {s.beta_mean:8.3f}",
            file=stdout,
        )
    return EXIT_OK


def cmd_analyze(args, stdout, stderr) -> int:
    try:
        if args.analysis == "hessian-check":
            res = hessian_sweep(args.trials, args.seed)
            ok = sum(r.positive_definite for r in res)
            print(f"{ok}/{len(res)} positive definite", file=stdout)
            print(f"min q1 = {min(r.q1 for r in res):.6e}", file=stdout)
            print(f"min q1*q3 - q2^2 = {min(r.det for r in res):.6e}", file=stdout)
            return EXIT_OK if ok == len(res) else EXIT_ABORT

        if args.analysis == "critical-root":
            rows = critical_root_table(args.beta_grid, args.vw_grid)
            _emit_table(("beta_deg", "v_w_pu", "omega_r1_pu"), rows, args.out, stdout)
            return EXIT_OK

        if args.analysis == "cp-contour":
            lams = np.linspace(2.0, 15.0, args.lambda_points)
            betas = np.linspace(0.0, 15.0, args.beta_points)
            nom = cp_table(lams, betas, NOMINAL_CP_COEFFS)
            deg = cp_table(lams, betas, DEGRADED_CP_COEFFS)
            rows = np.column_stack([nom, deg[:, 2]])
            _emit_table(("lambda", "beta_deg", "cp_nominal", "cp_degraded"), rows, args.out, stdout)
            return EXIT_OK

        if args.analysis == "place":
            g = synthesize(PlantParams().machine, poles=args.poles)
            got = eig4(closed_loop_matrix(g.machine, g.k))
            err = float(np.max(match_spectra(got, args.poles)))
            print("K =", file=stdout)
            for row in g.k:
                print("  " + "  ".join(f"{v:14.6f}" for v in row), file=stdout)
            print("achieved eigenvalues:", file=stdout)
            for e in sorted(got, key=lambda z: (z.real, z.imag)):
                print(f"  {e.real:+.9f} {e.imag:+.9f}j", file=stdout)
            print(f"max error = {err:.3e}", file=stdout)
            return EXIT_OK

        if args.analysis == "grid-min":
            if not (args.vw > 0 and all(math.isfinite(v) for v in (args.vw, args.pd, args.qd))):
                print("config error: --vw must be positive and all values finite", file=stderr)
                return EXIT_CONFIG
            m = grid_argmin(args.vw, args.pd, args.qd)
            print(f"omega_rd = {m.omega_rd:.8f}", file=stdout)
            print(f"theta    = {m.theta:.8f}", file=stdout)
            print(f"beta     = {m.beta:.8f}", file=stdout)
            print(f"f        = {m.f:.10g}", file=stdout)
            return EXIT_OK
    except OSError as exc:
        print(f"I/O error: {exc}", file=stderr)
        return EXIT_IO
    except (NumericsError, ArithmeticError, ValueError) as exc:
        print(f"analysis failed: {exc}", file=stderr)
        return EXIT_ABORT
    raise AssertionError(args.analysis)


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command == "simulate":
        return cmd_simulate(args, stdout, stderr)
    return cmd_analyze(args, stdout, stderr)


if __name__ == "__main__":
    sys.exit(main())
