"""End-to-end experiment harness.

One trial draws random costs, solves the game for every OD pair, recovers
costs with the residual program, re-solves every OD pair under the recovered
costs and scores the difference. Groups iterate over networks, player counts
and capacity rules with independent, reproducible random substreams.
"""

from __future__ import annotations

import csv
import json
import logging
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .analysis import flow_error, normalized_flow_error, spectral_check, summarize_trials, write_summary_csv
from .equilibrium import InfeasibleError, SolverSettings, solve_equilibrium
from .game import CostMode, CostParameterization, GameInstance
from .inverse import (
    ObservationSet,
    ParameterBounds,
    ResidualProgramError,
    predicted_variable_count,
    recover_parameters,
)
from .network import Network, build_grid, enumerate_od_pairs, load_network_file

__all__ = [
    "ALPHA_RULES",
    "ExperimentConfig",
    "GroupSpec",
    "ObservationBatch",
    "TrialRecord",
    "GroupReport",
    "randomize_costs",
    "capacity_vector",
    "generate_observations",
    "run_trial",
    "run_group",
    "trial_rng",
    "SUMMARY_METRICS",
]

log = logging.getLogger(__name__)

ALPHA_RULES = ("half", "full", "explicit")
SUMMARY_METRICS = ("io_objective", "flow_error", "normalized_flow_error", "c_int_gap", "c_base_gap")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    grid_sides: tuple = (2, 3, 4)
    network_file: Optional[str] = None
    cost_mode: CostMode = CostMode.SHARED
    players: tuple = (2, 5)
    alpha_rules: tuple = ("half", "full")
    alpha_explicit: Optional[tuple] = None
    trials: int = 3
    c_int_interval: tuple = (1.0, 5.0)
    c_base_interval: tuple = (5.0, 20.0)
    c_int_bounds: tuple = (1.0, 5.0)
    c_base_bounds: tuple = (5.0, 20.0)
    solver: SolverSettings = SolverSettings()
    output_dir: Optional[str] = None
    time_budget: float = 600.0
    threads: int = 1
    max_od_pairs: Optional[int] = None
    write_flows: bool = False

    def __post_init__(self):
        object.__setattr__(self, "cost_mode", CostMode.parse(self.cost_mode))
        object.__setattr__(self, "players", tuple(int(p) for p in self.players))
        object.__setattr__(self, "grid_sides", tuple(int(s) for s in self.grid_sides))
        object.__setattr__(self, "alpha_rules", tuple(self.alpha_rules))
        self.validate()

    def validate(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.players:
            raise ValueError("player list is empty")
        if any(p < 1 for p in self.players):
            raise ValueError("player counts must be positive")
        if self.network_file is None and not self.grid_sides:
            raise ValueError("no network: give grid sides or a network file")
        if any(s < 2 for s in self.grid_sides):
            raise ValueError("grid sides must be >= 2")
        if not self.alpha_rules:
            raise ValueError("at least one alpha rule is required")
        bad = set(self.alpha_rules) - set(ALPHA_RULES)
        if bad:
            raise ValueError(f"unknown alpha rules {sorted(bad)}")
        if "explicit" in self.alpha_rules and self.alpha_explicit is None:
            raise ValueError("explicit alpha rule needs alpha_explicit")
        for name in ("c_int", "c_base"):
            lo, hi = getattr(self, f"{name}_interval")
            blo, bhi = getattr(self, f"{name}_bounds")
            if not 0 < lo <= hi:
                raise ValueError(f"{name} interval must satisfy 0 < low <= high")
            if lo < blo or hi > bhi:
                raise ValueError(f"{name} interval [{lo}, {hi}] lies outside the bounds [{blo}, {bhi}]")
        if self.time_budget <= 0:
            raise ValueError("time budget must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["cost_mode"] = self.cost_mode.value
        doc["solver"] = {k: v for k, v in asdict(self.solver).items() if k != "trace"}
        doc["seed"] = int(self.seed)
        return doc

    def networks(self) -> list:
        if self.network_file is not None:
            net = load_network_file(self.network_file)
            return [(net.name or Path(self.network_file).stem, net)]
        return [(str(s), build_grid(s)) for s in self.grid_sides]

    def bounds(self, n: int) -> ParameterBounds:
        return ParameterBounds.uniform(n, self.c_int_bounds, self.c_base_bounds)


@dataclass(frozen=True)
class GroupSpec:
    network_label: str
    network: Network
    players: int
    alpha_rule: str

    def alpha_value(self, config: ExperimentConfig):
        return capacity_vector(self.alpha_rule, self.players, self.network.arc_count, config.alpha_explicit)

    def label(self, config: ExperimentConfig) -> str:
        if self.alpha_rule == "explicit":
            alpha = "explicit"
        else:
            alpha = repr(float(self.alpha_value(config)[0]))
        return f"{self.network_label}/{self.players}/{alpha}"


def capacity_vector(rule: str, players: int, n: int, explicit=None) -> np.ndarray:
    if rule == "half":
        return np.full(n, 0.5 * players)
    if rule == "full":
        return np.full(n, float(players))
    if rule == "explicit":
        if explicit is None:
            raise ValueError("the explicit rule needs a capacity value")
        alpha = np.asarray(explicit, dtype=float)
        if alpha.size == 1:
            alpha = np.full(n, float(alpha.ravel()[0]))
        if alpha.shape != (n,):
            raise ValueError(f"explicit capacity must have length {n}")
        return alpha
    raise ValueError(f"unknown alpha rule {rule!r}")


def trial_rng(seed: int, group_label: str, trial: int) -> np.random.Generator:
    """Substream keyed by ``(seed, crc32(group label), trial)``; PCG64 underneath."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(group_label.encode()), int(trial)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def randomize_costs(rng: np.random.Generator, mode, intervals, players: int, n: int) -> CostParameterization:
    """Uniform draws; ``intervals`` is ``((c_int_lo, c_int_hi), (c_base_lo, c_base_hi))``."""
    mode = CostMode.parse(mode)
    (a, b), (c, d) = intervals
    if not (0 < a <= b and 0 < c <= d):
        raise ValueError("cost intervals must be positive")
    rows = 1 if mode is CostMode.SHARED else players
    c_int = rng.uniform(a, b, size=(rows, n))
    c_base = rng.uniform(c, d, size=(rows, n))
    if mode is CostMode.SHARED:
        return CostParameterization.shared(c_int[0], c_base[0], players)
    return CostParameterization.per_player(c_int, c_base)


@dataclass
class ObservationBatch:
    """Converged observations plus per-pair status for every requested pair."""

    observations: Optional[ObservationSet]
    pair_status: list
    seconds: float = 0.0
    timed_out: bool = False

    @property
    def excluded(self) -> list:
        return [p["od"] for p in self.pair_status if not p["converged"]]


def generate_observations(net: Network, params: CostParameterization, players: int, alpha,
                          settings: SolverSettings = SolverSettings(), ods: Optional[Sequence] = None,
                          threads: int = 1, deadline: Optional[float] = None) -> ObservationBatch:
    """Solve the game once per OD pair; non-converged pairs are flagged and left out.

    An infeasible pair raises :class:`InfeasibleError`: the capacity rule must
    admit every pair.
    """
    ods = list(enumerate_od_pairs(net) if ods is None else ods)
    alpha = np.asarray(alpha, dtype=float)
    t0 = time.perf_counter()

    def solve(od):
        if deadline is not None and time.perf_counter() > deadline:
            return None
        return solve_equilibrium(GameInstance(net, players, alpha, od), params, settings)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sols = list(pool.map(solve, ods))
    else:
        sols = [solve(od) for od in ods]

    status, flows, kept = [], [], []
    timed_out = False
    for od, sol in zip(ods, sols):
        if sol is None:
            timed_out = True
            status.append({"od": list(od), "converged": False, "kkt_residual": None, "start_point": None,
                           "iterations": 0, "reason": "time budget"})
            continue
        status.append({
            "od": list(od),
            "converged": bool(sol.converged),
            "kkt_residual": float(sol.kkt_residual),
            "start_point": sol.start_point,
            "iterations": int(sol.iterations),
        })
        if sol.converged:
            flows.append(sol.x)
            kept.append(od)
    obs = ObservationSet(net, players, alpha, kept, np.array(flows)) if kept else None
    return ObservationBatch(obs, status, time.perf_counter() - t0, timed_out)


@dataclass
class TrialRecord:
    group: str
    trial: int
    complete: bool
    incomplete_reason: Optional[str] = None
    true_params: Optional[dict] = None
    recovered_params: Optional[dict] = None
    io_objective: Optional[float] = None
    negative_objective_flag: bool = False
    flow_error: Optional[float] = None
    normalized_flow_error: Optional[float] = None
    c_int_gap: Optional[float] = None
    c_base_gap: Optional[float] = None
    spectral: Optional[dict] = None
    pair_flags: dict = field(default_factory=dict)
    variable_counts: Optional[dict] = None
    predicted_variable_count: Optional[int] = None
    lp_certificate: Optional[dict] = None
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def deterministic_dict(self) -> dict:
        doc = self.to_dict()
        doc.pop("timings")
        return doc


def _param_gaps(true: CostParameterization, rec: CostParameterization):
    if true.mode is CostMode.SHARED:
        dc = true.c_int[0] - rec.c_int[0]
        db = true.c_base[0] - rec.c_base[0]
    else:
        dc = (true.c_int - rec.c_int).ravel()
        db = (true.c_base - rec.c_base).ravel()
    return float(np.linalg.norm(dc)), float(np.linalg.norm(db))


def _flags(batch: ObservationBatch) -> dict:
    return {
        "requested": len(batch.pair_status),
        "converged": sum(p["converged"] for p in batch.pair_status),
        "excluded": batch.excluded,
        "max_kkt_residual": max((p["kkt_residual"] for p in batch.pair_status if p["kkt_residual"] is not None),
                                default=None),
        "starts": sorted({p["start_point"] for p in batch.pair_status if p["start_point"]}),
    }


def _od_subset(net: Network, limit: Optional[int], rng: np.random.Generator) -> list:
    ods = enumerate_od_pairs(net)
    if limit is None or limit >= len(ods):
        return ods
    pick = np.sort(rng.choice(len(ods), size=limit, replace=False))
    return [ods[k] for k in pick]


def run_trial(config: ExperimentConfig, group: GroupSpec, trial: int) -> TrialRecord:
    label = group.label(config)
    rng = trial_rng(config.seed, label, trial)
    net, N = group.network, group.players
    n = net.arc_count
    alpha = group.alpha_value(config)
    rec = TrialRecord(group=label, trial=trial, complete=False)
    start = time.perf_counter()
    deadline = start + config.time_budget

    true = randomize_costs(rng, config.cost_mode, (config.c_int_interval, config.c_base_interval), N, n)
    ods = _od_subset(net, config.max_od_pairs, rng)
    rec.true_params = true.to_dict()
    rec.spectral = spectral_check(true, N).to_dict()
    kind = "grid" if config.network_file is None else "general"
    rec.predicted_variable_count = predicted_variable_count(net.node_count, N, n, config.cost_mode, kind)

    try:
        fwd = generate_observations(net, true, N, alpha, config.solver, ods, config.threads, deadline)
    except InfeasibleError as exc:
        rec.incomplete_reason = f"infeasible: {exc}"
        return rec
    rec.timings["forward"] = fwd.seconds
    rec.pair_flags["original"] = _flags(fwd)
    if fwd.timed_out or fwd.observations is None:
        rec.incomplete_reason = "time budget" if fwd.timed_out else "no converged observations"
        return rec

    try:
        recovered = recover_parameters(fwd.observations, config.bounds(n), config.cost_mode)
    except ResidualProgramError as exc:
        rec.incomplete_reason = str(exc)
        return rec
    rec.timings["lp_build"] = recovered.diagnostics["build_seconds"]
    rec.timings["lp_solve"] = recovered.diagnostics["solve_seconds"]
    rec.recovered_params = recovered.params.to_dict()
    rec.io_objective = recovered.io_objective
    rec.negative_objective_flag = recovered.negative_objective_flag
    rec.variable_counts = recovered.diagnostics["variable_counts"]
    rec.lp_certificate = {k: recovered.diagnostics.get(k) for k in
                          ("primal_infeasibility", "complementary_slackness", "duality_gap", "contract_ok")}
    rec.c_int_gap, rec.c_base_gap = _param_gaps(true, recovered.params)

    kept = fwd.observations.ods
    try:
        back = generate_observations(net, recovered.params, N, alpha, config.solver, kept, config.threads, deadline)
    except InfeasibleError as exc:
        rec.incomplete_reason = f"infeasible: {exc}"
        return rec
    rec.timings["resimulation"] = back.seconds
    rec.pair_flags["recovered"] = _flags(back)
    if back.timed_out or back.observations is None:
        rec.incomplete_reason = "time budget" if back.timed_out else "no converged observations"
        return rec

    # score only the pairs converged under both parameterizations
    both = {tuple(od) for od in back.observations.ods}
    idx_a = [k for k, od in enumerate(kept) if tuple(od) in both]
    A = fwd.observations.flows[idx_a]
    B = back.observations.flows
    rec.flow_error = flow_error(A, B)
    rec.normalized_flow_error = normalized_flow_error(A, B)
    rec.complete = True
    rec.timings["total"] = time.perf_counter() - start

    if config.write_flows and config.output_dir:
        _write_flows(Path(config.output_dir) / f"flows_{_slug(label)}_t{trial}.csv", kept, A, B)
    return rec


def _slug(label: str) -> str:
    return label.replace("/", "_")


def _write_flows(path: Path, ods, original, recovered) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["od_index", "origin", "destination", "player", "arc", "flow_original", "flow_recovered"])
        K, N, n = original.shape
        for k in range(K):
            for i in range(N):
                for a in range(n):
                    w.writerow([k, ods[k][0], ods[k][1], i, a, repr(float(original[k, i, a])),
                                repr(float(recovered[k, i, a]))])


@dataclass
class GroupReport:
    config: ExperimentConfig
    records: list
    summaries: list  # (metric, label, TrialSummary)

    @property
    def completed(self) -> int:
        return sum(r.complete for r in self.records)

    @property
    def incomplete(self) -> int:
        return len(self.records) - self.completed

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "summaries": [{"metric": m, "group": g, **s.to_dict()} for m, g, s in self.summaries],
            "completed": self.completed,
            "incomplete": self.incomplete,
        }


def group_specs(config: ExperimentConfig) -> list:
    specs = []
    for label, net in config.networks():
        for N in config.players:
            for rule in config.alpha_rules:
                specs.append(GroupSpec(label, net, N, rule))
    return specs


def run_group(config: ExperimentConfig, progress=None) -> GroupReport:
    """Run every configured group; writes JSON and CSV outputs when an output dir is set."""
    records, summaries = [], []
    out = Path(config.output_dir) if config.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for spec in group_specs(config):
        label = spec.label(config)
        group_records = []
        for t in range(config.trials):
            rec = run_trial(config, spec, t)
            group_records.append(rec)
            if progress is not None:
                progress(f"{label} trial {t}: " + ("complete" if rec.complete else f"incomplete ({rec.incomplete_reason})"))
        records.extend(group_records)
        done = [r for r in group_records if r.complete]
        for metric in SUMMARY_METRICS:
            vals = [getattr(r, metric) for r in done]
            if vals:
                summaries.append((metric, label, summarize_trials(vals)))
        if out is not None:
            doc = {"config": config.to_dict(), "group": label, "records": [r.to_dict() for r in group_records]}
            (out / f"group_{_slug(label)}.json").write_text(json.dumps(doc, indent=1) + "\n")
    report = GroupReport(config, records, summaries)
    if out is not None:
        write_summary_csv(out / "summary.csv", summaries)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    return report
