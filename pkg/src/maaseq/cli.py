"""Command line entry point: ``maaseq {build,solve,compare,sweep,probe}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import metrics
from .network import NetworkError, validate
from .scenarios import ScenarioError, SweepSpec, atomic_write, load_scenario, parse_grid, run_sweep, write_report, \
    write_sweep
from .solver import robustness_probe, solve

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3


def _common(p: argparse.ArgumentParser, multi_scenario: bool = False) -> None:
    if multi_scenario:
        p.add_argument("--scenario", action="append", required=True, metavar="PATH",
                       help="scenario file or built-in name; give twice")
    else:
        p.add_argument("--scenario", required=True, metavar="PATH", help="scenario file or built-in name")
    p.add_argument("--out", type=Path, metavar="DIR", help="directory for output files")
    p.add_argument("--format", choices=("json", "table", "csv"), default="table")
    p.add_argument("--step-size", type=float)
    p.add_argument("--max-step", type=float, help="largest preconditioned step")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maaseq", description="Equilibria of a MaaS pricing game")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("build", help="expand and validate the network, print its size"))
    _common(sub.add_parser("solve", help="solve one scenario and write report files"))
    p = sub.add_parser("compare", help="solve two scenarios and print the change table")
    _common(p, multi_scenario=True)
    p = sub.add_parser("sweep", help="solve over a grid of one parameter")
    _common(p)
    p.add_argument("--param", required=True,
                   help="wholesale | wholesale.<operator> | vot.<o>-<d> | capacity.<i>-<j>")
    p.add_argument("--grid", required=True, help="start:stop:step (inclusive) or comma-separated values")
    p.add_argument("--warm-start", action="store_true", help="start each point from the previous equilibrium")
    p = sub.add_parser("probe", help="re-solve from perturbed starting points")
    _common(p)
    p.add_argument("--scales", default="0.01,0.05,0.1")
    p.add_argument("--ratios", default="0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--threshold", type=float, default=5e-4, help="largest acceptable equilibrium gap")
    return parser


def _opts(sc, args):
    return sc.solver_options(step_size=args.step_size, max_step=args.max_step, tol=args.tol,
                             max_iter=args.max_iter)


def _emit(args, text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_build(args) -> int:
    sc = load_scenario(args.scenario)
    net = sc.build_network()
    stats = net.summary()
    stats["violations"] = validate(net, net.demand)
    stats["fingerprint"] = net.fingerprint()
    if args.out:
        atomic_write(args.out / "network.txt", net.serialize())
        atomic_write(args.out / "network.json", json.dumps(stats, indent=2) + "\n")
    if args.format == "json":
        _emit(args, json.dumps(stats, indent=2))
    else:
        flat = {k: v for k, v in stats.items() if not isinstance(v, (dict, list))}
        flat.update({f"actions.{k}": v for k, v in stats["actions_by_kind"].items()})
        if args.format == "csv":
            _emit(args, metrics.rows_to_csv([flat]))
        else:
            w = max(map(len, flat)) + 2
            _emit(args, "\n".join(f"{k:<{w}}{v}" for k, v in flat.items()))
    return EXIT_ERROR if stats["violations"] else EXIT_OK


def cmd_solve(args) -> int:
    sc = load_scenario(args.scenario)
    report = solve(sc, _opts(sc, args), workers=args.threads)
    if args.out:
        write_report(args.out, report)
    if args.format == "json":
        _emit(args, report.to_json())
    elif args.format == "csv":
        _emit(args, metrics.rows_to_csv([{"name": report.name, "converged": report.converged,
                                          "iterations": report.iterations, **report.scalars()}]))
    else:
        _emit(args, report.to_table())
        _emit(args, f"converged={report.converged} iterations={report.iterations} "
                    f"residual={report.residual_natural:.3e}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_compare(args) -> int:
    if len(args.scenario) != 2:
        raise _Usage("compare needs exactly two --scenario arguments")
    reports = []
    for s in args.scenario:
        sc = load_scenario(s)
        reports.append(solve(sc, _opts(sc, args), workers=args.threads))
    rows = metrics.compare(*reports)
    if args.out:
        for r in reports:
            write_report(args.out / r.name, r)
        atomic_write(args.out / "compare.csv", metrics.rows_to_csv(rows))
        atomic_write(args.out / "compare.txt", metrics.format_table(reports, arrows=True))
    if args.format == "json":
        _emit(args, json.dumps(rows, indent=2))
    elif args.format == "csv":
        _emit(args, metrics.rows_to_csv(rows))
    else:
        _emit(args, metrics.format_table(reports, arrows=True))
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    try:
        spec = SweepSpec(args.param, parse_grid(args.grid), warm_start=args.warm_start)
    except ValueError as e:
        raise _Usage(str(e)) from None
    sc = load_scenario(args.scenario)
    res = run_sweep(sc, spec, _opts(sc, args), threads=args.threads)
    if args.out:
        write_sweep(args.out, res)
    if args.format == "json":
        _emit(args, json.dumps({"rows": res.rows, "analysis": res.analysis}, indent=2, default=float))
    else:
        _emit(args, res.csv())
        if args.format == "table":
            _emit(args, json.dumps(res.analysis, indent=2, default=float))
    return EXIT_OK if all(r["converged"] for r in res.rows) else EXIT_NOT_CONVERGED


def cmd_probe(args) -> int:
    try:
        scales = tuple(float(v) for v in args.scales.split(","))
        ratios = tuple(float(v) for v in args.ratios.split(","))
    except ValueError as e:
        raise _Usage(f"bad --scales/--ratios: {e}") from None
    sc = load_scenario(args.scenario)
    res = robustness_probe(sc, _opts(sc, args), scales, ratios, args.reps, args.seed)
    cells = res.cells()
    summary = {"seed": res.seed, "samples": len(res.rows), "max_gap": res.max_gap(),
               "threshold": args.threshold, "all_converged": all(r["converged"] for r in res.rows)}
    if args.out:
        atomic_write(args.out / "probe.csv", metrics.rows_to_csv(res.rows))
        atomic_write(args.out / "probe_cells.csv", metrics.rows_to_csv(cells))
        atomic_write(args.out / "probe.json", json.dumps(summary, indent=2) + "\n")
    if args.format == "json":
        _emit(args, json.dumps({"summary": summary, "cells": cells}, indent=2))
    else:
        _emit(args, metrics.rows_to_csv(cells))
        if args.format == "table":
            _emit(args, "  ".join(f"{k}={v}" for k, v in summary.items()))
    if not summary["all_converged"]:
        return EXIT_NOT_CONVERGED
    return EXIT_OK if summary["max_gap"] <= args.threshold else EXIT_ERROR


class _Usage(Exception):
    pass


COMMANDS = {"build": cmd_build, "solve": cmd_solve, "compare": cmd_compare, "sweep": cmd_sweep, "probe": cmd_probe}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except _Usage as e:
        parser.print_usage(sys.stderr)
        print(f"maaseq {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, NetworkError, ValueError) as e:
        print(f"maaseq {args.command}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
