"""Command-line entry point ``qlbm``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 1 I/O or
other package error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import (
    ConfigurationError, DegenerateProjectionError, DomainError, FitFailure, PreconditionError, QLBMError,
    ResourceError, ShapeError,
)

EXIT_OK, EXIT_OTHER, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


def _int_list(text: str) -> list:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlbm", description="Quantum lattice Boltzmann simulator and readout experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario file")
    run.add_argument("scenario", help="scenario JSON path or the name of a bundled scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default: the scenario's output field)")
    run.add_argument("--steps", type=int, help="override T")
    run.add_argument("--method", help="override readout.method")
    run.add_argument("--shots", type=int, help="override readout.shots")
    run.add_argument("--settings", type=int, help="override readout.settings")
    run.add_argument("--chi", type=int, help="override readout.chi")
    run.add_argument("--noise-p", type=float, help="override readout.noise_p")
    run.add_argument("--route", help="override route")
    run.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    val = sub.add_parser("validate", help="check scenario files without running them")
    val.add_argument("scenarios", nargs="+")

    sub.add_parser("list", help="list bundled scenarios")

    mps = sub.add_parser("sweep-mps", help="MPS infidelity along swirl trajectories")
    mps.add_argument("--grid", type=_int_list, default=[16, 32])
    mps.add_argument("--chi", type=_int_list, default=[2, 4, 8, 16])
    mps.add_argument("--out", default="sweep-mps")

    sh = sub.add_parser("sweep-shadow", help="shadow vs direct readout with reload every step")
    sh.add_argument("--shots", type=_int_list, default=[1000, 10000, 20000])
    sh.add_argument("--settings", type=int, default=25)
    sh.add_argument("--seeds", type=_int_list_or_zero, default=[0])
    sh.add_argument("--chi-shadow", type=int, default=4)
    sh.add_argument("--chi-direct", type=int, default=8)
    sh.add_argument("--L", type=int, default=16)
    sh.add_argument("--steps", type=int, default=10)
    sh.add_argument("--out", default="sweep-shadow")

    fw = sub.add_parser("sweep-fwht", help="interpolated transform error and cost vs K")
    fw.add_argument("--L", type=_int_list, default=[16, 32])
    fw.add_argument("--K", type=_int_list, default=[2, 4, 8, 16])
    fw.add_argument("--out", default="sweep-fwht")
    return p


def _int_list_or_zero(text: str) -> list:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError(f"expected non-negative integers, got {text!r}")
    return vals


def _cmd_run(args) -> int:
    from .pipeline import run_pipeline
    from .scenario import parse_scenario

    overrides = {"seed": args.seed, "T": args.steps, "route": args.route, "readout.method": args.method,
                 "readout.shots": args.shots, "readout.settings": args.settings, "readout.chi": args.chi,
                 "readout.noise_p": args.noise_p}
    scn = parse_scenario(args.scenario, overrides)
    out = Path(args.out or scn.output)
    report, _ = run_pipeline(scn, out_dir=out, figures=not args.no_figures)
    s = report.to_dict()["summary"]
    print(f"{scn.name or scn.model}: T={scn.T} method={report.method} final fidelity={s['final_fidelity']:.6f} "
          f"cumulative p={s['cumulative_p_success']:.6g} -> {out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .scenario import parse_scenario

    status = EXIT_OK
    for path in args.scenarios:
        try:
            scn = parse_scenario(path)
            print(f"{path}: ok ({scn.model}, L={scn.L}, T={scn.T}, readout={scn.readout['method']})")
        except ConfigurationError as e:
            print(f"{path}: {e}", file=sys.stderr)
            status = EXIT_VALIDATION
    return status


def _cmd_list(args) -> int:
    from .scenario import packaged_scenarios

    for name in packaged_scenarios():
        print(name)
    return EXIT_OK


def _cmd_sweep_mps(args) -> int:
    from . import plotting
    from .io import write_table
    from .pipeline import sweep_mps

    rows, peaks = sweep_mps(args.grid, args.chi)
    out = Path(args.out)
    write_table(out / "infidelity_vs_time.csv", ["grid", "chi", "t", "infidelity"],
                [[r["grid"], r["chi"], r["t"], r["infidelity"]] for r in rows])
    write_table(out / "infidelity_vs_chi.csv", ["grid", "chi", "peak_infidelity"],
                [[r["grid"], r["chi"], r["peak_infidelity"]] for r in peaks])
    plotting.plot_infidelity_vs_time(rows, out / "infidelity_vs_time.png")
    plotting.plot_peak_vs_chi(peaks, out / "infidelity_vs_chi.png")
    for r in peaks:
        print(f"L={r['grid']} chi={r['chi']} peak infidelity={r['peak_infidelity']:.3e}")
    return EXIT_OK


def _cmd_sweep_shadow(args) -> int:
    from . import plotting
    from .io import write_table
    from .pipeline import final_fidelity_means, sweep_shadow

    rows = sweep_shadow(args.shots, args.settings, args.seeds, args.chi_shadow, args.chi_direct, args.L, args.steps)
    out = Path(args.out)
    write_table(out / "fidelity_vs_time.csv", ["method", "shots", "seed", "chi", "t", "fidelity"],
                [[r["method"], r["shots"], r["seed"], r["chi"], r["t"], r["fidelity"]] for r in rows])
    plotting.plot_shadow_sweep(rows, out / "fidelity_vs_time.png")
    for (method, shots), f in sorted(final_fidelity_means(rows).items()):
        print(f"{method} shots={shots} mean final fidelity={f:.4f}")
    return EXIT_OK


def _cmd_sweep_fwht(args) -> int:
    from . import plotting
    from .io import write_table
    from .pipeline import sweep_fwht

    rows = sweep_fwht(args.L, args.K)
    if not rows:
        raise ConfigurationError("no (L, K) pair with K <= L", field="K")
    out = Path(args.out)
    write_table(out / "error_vs_K.csv", ["L", "K", "method", "rel_error", "butterflies", "entries"],
                [[r["L"], r["K"], r["method"], r["rel_error"], r["butterflies"], r["entries"]] for r in rows])
    plotting.plot_fwht_error([r for r in rows if r["method"] != "dense"], out / "error_vs_K.png")
    for r in rows:
        if r["method"] == "interpolated":
            print(f"L={r['L']} K={r['K']} rel error={r['rel_error']:.3e} butterflies={r['butterflies']}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "validate": _cmd_validate, "list": _cmd_list, "sweep-mps": _cmd_sweep_mps,
            "sweep-shadow": _cmd_sweep_shadow, "sweep-fwht": _cmd_sweep_fwht}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ShapeError, DomainError, PreconditionError) as e:
        print(f"qlbm: validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DegenerateProjectionError, FitFailure, ResourceError) as e:
        print(f"qlbm: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except QLBMError as e:
        print(f"qlbm: error: {e}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
