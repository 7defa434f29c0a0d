"""Command-line entry point.

Every subcommand is a thin adapter over the library; exit status is 0 on
success, 1 on invalid input and 2 when a solver fails to converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .analysis import SUMMARY_HEADER, spectral_check, summarize_trials, write_summary_csv
from .equilibrium import DidNotConvergeError, InfeasibleError, SolverSettings
from .experiment import (
    ALPHA_RULES,
    SUMMARY_METRICS,
    ExperimentConfig,
    capacity_vector,
    generate_observations,
    randomize_costs,
    run_group,
    trial_rng,
)
from .game import CostMode, CostParameterization
from .inverse import (
    ObservationError,
    ParameterBounds,
    ResidualProgramError,
    load_observations,
    predicted_variable_count,
    recover_parameters,
    save_observations,
)
from .network import NetworkError, ODPair, build_grid, enumerate_od_pairs, load_network_file, save_network_json

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2

log = logging.getLogger("gnep_inverse")


class CLIError(ValueError):
    pass


def _pair(text: str, kind=float) -> tuple:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_pair(text: str) -> tuple:
    return _pair(text, int)


def _int_list(text: str) -> tuple:
    try:
        vals = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text: str) -> np.ndarray:
    try:
        return np.array([float(p) for p in text.split(",") if p.strip()])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_network(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--network", help="network file (.json native format or TNTP)")
    g.add_argument("--side", type=int, help="use a side x side grid")


def _add_bounds(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bounds-cint", type=_pair, default=(1.0, 5.0), metavar="LO,HI",
                   help="bounds on the interaction-cost diagonals (default 1,5)")
    p.add_argument("--bounds-cbase", type=_pair, default=(5.0, 20.0), metavar="LO,HI",
                   help="bounds on the base costs (default 5,20)")


def _add_alpha(p: argparse.ArgumentParser, multiple: bool = False) -> None:
    if multiple:
        p.add_argument("--alpha-rule", nargs="+", choices=ALPHA_RULES, default=["half", "full"],
                       help="capacity rules: half (0.5 N), full (N) or explicit")
    else:
        p.add_argument("--alpha-rule", choices=ALPHA_RULES, default="full",
                       help="capacity rule: half (0.5 N), full (N) or explicit")
    p.add_argument("--alpha", type=_float_list, metavar="A[,A...]",
                   help="capacity for the explicit rule: one value or one per arc")


def _network(args):
    if args.side is not None:
        return build_grid(args.side)
    return load_network_file(args.network)


def _emit(args, doc: dict, text: Optional[str] = None) -> None:
    if args.json:
        print(json.dumps(doc, indent=1))
    elif text is not None:
        print(text)


# --------------------------------------------------------------------------
# subcommands


def cmd_generate_grid(args) -> int:
    net = build_grid(args.side)
    save_network_json(net, args.out)
    _emit(args, {"nodes": net.node_count, "arcs": net.arc_count, "out": str(args.out)},
          f"wrote {args.out}: {net.node_count} nodes, {net.arc_count} arcs")
    return EXIT_OK


def _parse_od(text: str, net) -> list:
    if text == "all":
        return enumerate_od_pairs(net)
    o, d = _int_pair(text)
    return [ODPair(o, d)]


def cmd_solve_forward(args) -> int:
    net = _network(args)
    N = args.players
    alpha = capacity_vector(args.alpha_rule, N, net.arc_count, args.alpha)
    if args.costs is not None:
        params = CostParameterization.load(args.costs)
    elif args.seed is not None:
        rng = trial_rng(args.seed, "solve-forward", 0)
        params = randomize_costs(rng, args.cost_mode, (args.bounds_cint, args.bounds_cbase), N, net.arc_count)
    else:
        raise CLIError("give --costs or --seed")
    params = params.for_players(N)
    ods = _parse_od(args.od, net)
    settings = SolverSettings(tolerance=args.tol)
    batch = generate_observations(net, params, N, alpha, settings, ods, args.threads)
    converged = [p for p in batch.pair_status if p["converged"]]
    if batch.observations is not None and args.out is not None:
        save_observations(batch.observations, args.out)
    worst = max((p["kkt_residual"] for p in batch.pair_status), default=float("nan"))
    doc = {
        "pairs": len(ods),
        "converged": len(converged),
        "max_kkt_residual": worst,
        "excluded": batch.excluded,
        "out": None if args.out is None else str(args.out),
    }
    if batch.observations is not None and len(ods) == 1:
        doc["flows"] = batch.observations.flows[0].tolist()
    _emit(args, doc, f"{len(converged)}/{len(ods)} pairs converged, max KKT residual {worst:.3e}")
    return EXIT_OK if len(converged) == len(ods) else EXIT_NOT_CONVERGED


def cmd_recover(args) -> int:
    obs = load_observations(args.observations)
    n = obs.network.arc_count
    bounds = ParameterBounds.uniform(n, args.bounds_cint, args.bounds_cbase)
    rec = recover_parameters(obs, bounds, args.cost_mode, method=args.lp_method)
    if args.out is not None:
        rec.params.save(args.out)
    doc = {
        "io_objective": rec.io_objective,
        "negative_objective_flag": rec.negative_objective_flag,
        "params": rec.params.to_dict(),
        "contract_ok": rec.diagnostics.get("contract_ok"),
        "variable_counts": rec.diagnostics.get("variable_counts"),
    }
    _emit(args, doc, f"io objective {rec.io_objective:.6e}")
    return EXIT_OK


def cmd_run_experiment(args) -> int:
    if args.network is None and args.grid is None:
        grid = (2, 3, 4)
    else:
        grid = args.grid or ()
    config = ExperimentConfig(
        seed=args.seed,
        grid_sides=grid,
        network_file=args.network,
        cost_mode=args.cost_mode,
        players=args.players,
        alpha_rules=tuple(args.alpha_rule),
        alpha_explicit=None if args.alpha is None else tuple(args.alpha.tolist()),
        trials=args.trials,
        c_int_interval=args.bounds_cint,
        c_base_interval=args.bounds_cbase,
        c_int_bounds=args.bounds_cint,
        c_base_bounds=args.bounds_cbase,
        solver=SolverSettings(tolerance=args.tol),
        output_dir=args.out,
        time_budget=args.time_budget,
        threads=args.threads,
        max_od_pairs=args.max_od_pairs,
        write_flows=args.write_flows,
    )
    report = run_group(config, progress=lambda line: log.info("%s", line))
    doc = {
        "completed": report.completed,
        "incomplete": report.incomplete,
        "summaries": [{"metric": m, "group": g, **s.to_dict()} for m, g, s in report.summaries],
        "out": args.out,
    }
    _emit(args, doc, f"{report.completed} trials complete, {report.incomplete} incomplete")
    return EXIT_OK if report.incomplete == 0 else EXIT_NOT_CONVERGED


def cmd_spectral_check(args) -> int:
    params = CostParameterization.load(args.costs)
    N = args.players if args.players is not None else params.player_count
    rep = spectral_check(params, N, dense=args.dense)
    _emit(args, rep.to_dict(),
          f"min eigenvalue of the symmetric part {rep.min_eig_symmetric_part:.6e} "
          f"({'positive definite' if rep.is_positive_definite else 'not positive definite'})")
    return EXIT_OK


def cmd_count_variables(args) -> int:
    count = predicted_variable_count(args.grid, args.players, args.arcs, args.mode, args.kind)
    _emit(args, {"nodes": args.grid, "players": args.players, "arcs": args.arcs, "mode": args.mode,
                 "kind": args.kind, "count": count}, str(count))
    return EXIT_OK


def _records(paths: Sequence[str]) -> list:
    out = []
    for path in paths:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"{path}: {exc}") from None
        if "records" not in doc:
            raise CLIError(f"{path}: not a group or experiment report")
        out.extend(doc["records"])
    return out


def cmd_summarize(args) -> int:
    records = _records(args.reports)
    groups = []
    for r in records:
        if r["group"] not in groups:
            groups.append(r["group"])
    rows = []
    for label in groups:
        done = [r for r in records if r["group"] == label and r["complete"]]
        for metric in SUMMARY_METRICS:
            vals = [r[metric] for r in done if r.get(metric) is not None]
            if vals:
                rows.append((metric, label, summarize_trials(vals)))
    if args.out is not None:
        write_summary_csv(args.out, rows)
    doc = {"rows": [{"metric": m, "group": g, **s.to_dict()} for m, g, s in rows],
           "records": len(records), "completed": sum(bool(r["complete"]) for r in records)}
    text = "\n".join([",".join(SUMMARY_HEADER[:5])] + [
        f"{m},{g},{s.q1:.6g},{s.median:.6g},{s.q3:.6g}" for m, g, s in rows])
    _emit(args, doc, text)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnep-inverse",
        description="Simulate capacity-coupled routing games and recover their costs from equilibrium flows.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--json", action="store_true", help="print results as JSON")
        p.set_defaults(func=func)
        return p

    p = add("generate-grid", cmd_generate_grid, "write a square grid network as JSON")
    p.add_argument("--side", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("solve-forward", cmd_solve_forward, "solve the game for one OD pair or all of them")
    _add_network(p)
    p.add_argument("--players", type=int, required=True)
    _add_alpha(p)
    p.add_argument("--od", default="all", help="O,D (1-based nodes) or 'all' (default)")
    p.add_argument("--costs", help="cost parameterization JSON")
    p.add_argument("--seed", type=int, help="draw random costs when --costs is absent")
    p.add_argument("--cost-mode", choices=[m.value for m in CostMode], default="shared")
    _add_bounds(p)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="observation CSV (a .json sidecar is written next to it)")

    p = add("recover", cmd_recover, "recover costs from an observation CSV")
    p.add_argument("--observations", required=True, help="observation CSV or its JSON sidecar")
    p.add_argument("--cost-mode", choices=[m.value for m in CostMode], default="shared")
    _add_bounds(p)
    p.add_argument("--lp-method", choices=("auto", "simplex", "highs", "highs-ipm"), default="auto")
    p.add_argument("--out", help="write recovered costs as JSON")

    p = add("run-experiment", cmd_run_experiment, "run the randomized recovery experiment")
    p.add_argument("--seed", type=int, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--grid", type=_int_list, help="grid sides, e.g. 2,3,4 (default)")
    g.add_argument("--network", help="network file instead of grids")
    p.add_argument("--players", type=_int_list, default=(2, 5), help="player counts, e.g. 2,5")
    _add_alpha(p, multiple=True)
    p.add_argument("--cost-mode", choices=[m.value for m in CostMode], default="shared")
    _add_bounds(p)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--time-budget", type=float, default=600.0, help="seconds per trial")
    p.add_argument("--threads", type=int, default=1, help="parallel OD solves")
    p.add_argument("--max-od-pairs", type=int, help="sample this many OD pairs per trial")
    p.add_argument("--write-flows", action="store_true", help="write flow tensors as CSV")
    p.add_argument("--out", help="output directory for reports")

    p = add("spectral-check", cmd_spectral_check, "minimum eigenvalue of the symmetric interaction matrix")
    p.add_argument("--costs", required=True)
    p.add_argument("--players", type=int)
    p.add_argument("--dense", action="store_true", help="use the full nN x nN matrix")

    p = add("count-variables", cmd_count_variables, "closed-form variable count of the residual program")
    p.add_argument("--grid", type=int, required=True, metavar="M", help="node count m")
    p.add_argument("--players", type=int, required=True)
    p.add_argument("--arcs", type=int, help="arc count (general graphs)")
    p.add_argument("--mode", choices=[m.value for m in CostMode], default="shared")
    p.add_argument("--kind", choices=("grid", "general"), default="grid")

    p = add("summarize", cmd_summarize, "boxplot statistics from experiment reports")
    p.add_argument("reports", nargs="+", help="report.json or group_*.json files")
    p.add_argument("--out", help="summary CSV")
    return parser


def _check_paths(args) -> None:
    for name in ("network", "costs", "observations"):
        path = getattr(args, name, None)
        if path is not None and not Path(path).exists():
            raise CLIError(f"--{name}: {path} does not exist")
    for path in getattr(args, "reports", None) or ():
        if not Path(path).exists():
            raise CLIError(f"{path} does not exist")
    out = getattr(args, "out", None)
    if out is not None and args.command != "run-experiment":
        parent = Path(out).parent
        if not parent.is_dir():
            raise CLIError(f"--out: directory {parent} does not exist")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        _check_paths(args)
        return args.func(args)
    except (DidNotConvergeError, ResidualProgramError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (CLIError, NetworkError, ObservationError, InfeasibleError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
