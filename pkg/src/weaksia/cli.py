"""Command-line entry point: ``weaksia <subcommand> [--config FILE] [overrides]``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import cost, harness, mms
from .momentum import W_SIA, W_SIASTOKES


def _config_help() -> str:
    keys = "\n".join(f"  {k:<22} {t}" for k, t in harness.config_keys().items())
    return ("Config files are INI with one section per subcommand "
            "([simulate], [dt-scan], [error-runtime], [mms]). Keys:\n" + keys)


def _add_common(p):
    p.add_argument("--config", type=Path, help="INI file; the section named after the subcommand is read")
    p.add_argument("--formulation", action="append",
                   help="model label such as SIA, W-SIA, W-SIAStokes-FSSA, W-Stokes (repeatable)")
    p.add_argument("--theta", type=float, help="FSSA weight in [0, 1] applied to every model")
    p.add_argument("--nx", type=int, action="append", help="horizontal elements (repeatable)")
    p.add_argument("--dt", type=float, help="timestep in years")
    p.add_argument("--tfinal", type=float, help="final time in years")
    p.add_argument("--upwind", action="store_true", help="add upwind viscosity to the surface step")
    p.add_argument("--geometry", choices=harness.GEOMETRIES)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _config(args, section) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config, section) if args.config else harness.ExperimentConfig()
    changes = {}
    if args.formulation:
        changes["formulations"] = tuple(args.formulation)
    if args.theta is not None:
        changes["theta"] = args.theta
    if args.nx:
        changes["n_x"] = tuple(args.nx)
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.tfinal is not None:
        changes["t_final"] = args.tfinal
    if args.upwind:
        changes["upwind"] = True
    if args.geometry:
        changes["geometry"] = args.geometry
    if args.out:
        changes["output_dir"] = str(args.out)
    return replace(cfg, **changes)


def cmd_simulate(args) -> int:
    cfg = _config(args, "simulate")
    ok = True
    for label in cfg.formulations:
        for n in cfg.n_x:
            res = harness.run_coupled_simulation(cfg, label, n)
            out = Path(cfg.output_dir) / f"{res.record.formulation}_nx{n}"
            harness.write_simulation_outputs(res, out)
            r = res.record
            print(f"{r.formulation} dx={r.dx:g} dt={r.dt:g} T={r.T_final:g} "
                  f"runtime={r.runtime_wall:.2f}s stable={r.stable} {res.message}")
            ok &= r.stable
    return 0 if ok else 1


def cmd_dt_scan(args) -> int:
    cfg = _config(args, "dt-scan")
    scan = harness.run_dt_scan(cfg)
    harness.write_scan_outputs(scan, cfg.output_dir)
    records = scan.records()
    if records:
        harness.emit_plot_data(records, "dt-scan", cfg.output_dir)
    for label, rs in scan.results.items():
        for r in rs:
            print(f"{label} dx={r.dx:g} dt*={r.dt_star:.4g} {r.flag}")
        if label in scan.fits:
            print(f"{label} p={scan.fits[label].p:.3f}")
    for key, msg in scan.failures.items():
        print(f"failed {key}: {msg}", file=sys.stderr)
    flagged = any(r.unbounded for rs in scan.results.values() for r in rs)
    return 0 if not scan.failures and not flagged else 1


def cmd_error_runtime(args) -> int:
    cfg = _config(args, "error-runtime")
    records = harness.run_error_vs_runtime(cfg)
    harness.emit_plot_data(records, "error-runtime", cfg.output_dir)
    for r in records:
        err = "unstable" if r.error_rel is None else f"{r.error_rel:.3e}"
        print(f"{r.formulation} dt={r.dt:g} runtime={r.runtime_wall:.2f}s error={err}")
    return 0 if all(r.stable for r in records) else 1


def cmd_mms(args) -> int:
    ok = True
    for formulation, threshold in ((W_SIASTOKES, 1.5), (W_SIA, 1.0)):
        table = mms.run_mms_convergence(formulation)
        for n, ev, ep, order in table.rows():
            o = "" if order is None else f"{order:.2f}"
            print(f"{formulation} n={n} velocity_L2={ev:.3e} pressure_L2={ep:.3e} order={o}")
        passed = table.order >= threshold
        print(f"{formulation} fitted order {table.order:.2f} ({'ok' if passed else 'FAILED'})")
        ok &= passed
    return 0 if ok else 1


def cmd_cost_table(args) -> int:
    out = Path(args.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    cost.write_cost_table(out / "cost_table.csv")
    for name, gamma, formula, expo in cost.cost_table():
        print(f"{name:18s} gamma={gamma} {formula}  exponent {expo}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="weaksia", description=__doc__,
                                 epilog=_config_help(),
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, text in (("simulate", cmd_simulate, "run coupled simulations"),
                           ("dt-scan", cmd_dt_scan, "largest stable timestep per mesh size"),
                           ("error-runtime", cmd_error_runtime, "error against a reference run"),
                           ("mms", cmd_mms, "manufactured-solution convergence"),
                           ("cost-table", cmd_cost_table, "asymptotic cost exponents")):
        p = sub.add_parser(name, help=text, epilog=_config_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _add_common(p)
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
