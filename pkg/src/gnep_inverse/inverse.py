"""Residual inverse optimization: recover costs from observed equilibrium flows.

For every observation ``k`` (one OD pair, all players routing one unit) the
program penalizes, in the 1-norm,

* stationarity   ``C_i (2 x_i + sum_{j != i} x_j) + cbar_i + D' v_i - u_i + ubar``
* complementarity of ``x_i >= 0``           ``x_i' u_i``            (one scalar per player)
* complementarity of the joint capacity  ``(alpha - sum_j x_j)' ubar``  (one scalar)

over cost diagonals and base costs held inside prior bounds, and over duals
``v_i`` (free), ``u_i >= 0`` and a single ``ubar >= 0`` per observation that
every player shares. Flows are data, so the program is linear.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .game import CostMode, CostParameterization
from .lp import AffineBlock, LinearProgram, LPBuilder, LPResult, LPStatus, linearize_l1_group, solve_lp
from .network import Network, NetworkError, ODPair, demand_vector, incidence_matrix

__all__ = [
    "ObservationError",
    "ResidualProgramError",
    "ObservationSet",
    "ParameterBounds",
    "ResidualIndex",
    "RecoveredParameters",
    "build_residual_program",
    "recover_parameters",
    "predicted_variable_count",
    "actual_variable_count",
    "evaluate_residual_objective",
    "save_observations",
    "load_observations",
]

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6
NEGATIVE_OBJECTIVE_TOL = -1e-9
# Coefficients below this are dropped by HiGHS; snapping them here keeps the
# certified program identical to the one actually solved.
COEF_ZERO = 1e-9


class ObservationError(ValueError):
    """Observations violate conservation, capacity or sign requirements."""


class ResidualProgramError(RuntimeError):
    """The compiled program did not reach an optimal status."""

    def __init__(self, result: LPResult):
        super().__init__(f"residual program not solved: {result.status.value} {result.diagnostics.get('message', '')}")
        self.result = result


@dataclass
class ObservationSet:
    network: Network
    player_count: int
    capacity: np.ndarray
    ods: list
    flows: np.ndarray  # (K, N, n)

    def __post_init__(self):
        self.capacity = np.asarray(self.capacity, dtype=float)
        if self.capacity.ndim == 0:
            self.capacity = np.full(self.network.arc_count, float(self.capacity))
        self.ods = [ODPair(*od) for od in self.ods]
        self.flows = np.asarray(self.flows, dtype=float)
        if self.flows.ndim == 2 and self.player_count == 1:
            self.flows = self.flows[:, None, :]

    @property
    def K(self) -> int:
        return len(self.ods)

    def validate(self, tol: float = FEAS_TOL) -> None:
        K, N, n = self.K, self.player_count, self.network.arc_count
        if K == 0:
            raise ObservationError("observation set is empty")
        if self.flows.shape != (K, N, n):
            raise ObservationError(f"flows have shape {self.flows.shape}, expected {(K, N, n)}")
        if self.capacity.shape != (n,):
            raise ObservationError(f"capacity must have length {n}")
        if np.any(self.flows < -tol):
            raise ObservationError("negative flow in observations")
        D = incidence_matrix(self.network).astype(float)
        for k, od in enumerate(self.ods):
            f = demand_vector(self.network, od)
            x = self.flows[k]
            if np.any(np.all(np.abs(x) <= tol, axis=1)):
                raise ObservationError(f"observation {k}: a player carries no flow")
            err = np.max(np.abs(x @ D.T - f))
            if err > tol:
                raise ObservationError(f"observation {k} (OD {tuple(od)}): conservation violated by {err:.3e}")
            over = np.max(x.sum(axis=0) - self.capacity)
            if over > tol:
                raise ObservationError(f"observation {k} (OD {tuple(od)}): capacity exceeded by {over:.3e}")

    def permuted(self, order: Sequence[int]) -> "ObservationSet":
        order = list(order)
        return ObservationSet(self.network, self.player_count, self.capacity,
                              [self.ods[k] for k in order], self.flows[order])


OBS_HEADER = ("od_index", "player", "arc", "flow")


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_observations(obs: ObservationSet, path) -> Path:
    """Write flows as CSV rows ``od_index, player, arc, flow`` plus a JSON sidecar.

    The sidecar sits next to the CSV with a ``.json`` suffix and holds the
    network (native JSON form), player count, capacity and OD list. Returns
    the sidecar path.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(OBS_HEADER)
        K, N, n = obs.flows.shape
        for k in range(K):
            for i in range(N):
                for a in range(n):
                    w.writerow([k, i, a, repr(float(obs.flows[k, i, a]))])
    net = obs.network
    doc = {
        "flows": path.name,
        "network": {
            "name": net.name,
            "nodes": net.node_count,
            "arcs": [{"tail": a.tail, "head": a.head} for a in net.arcs],
        },
        "players": obs.player_count,
        "capacity": obs.capacity.tolist(),
        "ods": [list(od) for od in obs.ods],
    }
    side = _sidecar(path)
    side.write_text(json.dumps(doc, indent=1) + "\n")
    return side


def load_observations(path) -> ObservationSet:
    """Inverse of :func:`save_observations`; ``path`` may name the CSV or the sidecar."""
    path = Path(path)
    side = path if path.suffix.lower() == ".json" else _sidecar(path)
    try:
        doc = json.loads(side.read_text())
        net_doc = doc["network"]
        net = Network.from_pairs(int(net_doc["nodes"]), [(a["tail"], a["head"]) for a in net_doc["arcs"]],
                                 name=net_doc.get("name", "network"))
        N = int(doc["players"])
        ods = [ODPair(int(o), int(d)) for o, d in doc["ods"]]
        capacity = np.asarray(doc["capacity"], dtype=float)
        flows_path = side.parent / doc.get("flows", path.name)
    except (OSError, KeyError, TypeError, ValueError, NetworkError) as exc:
        raise ObservationError(f"{side}: cannot read observation sidecar ({exc})") from None
    flows = np.full((len(ods), N, net.arc_count), np.nan)
    with open(flows_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != OBS_HEADER:
            raise ObservationError(f"{flows_path}: expected header {','.join(OBS_HEADER)}")
        for line, rec in enumerate(reader, start=2):
            try:
                k, i, a, x = int(rec[0]), int(rec[1]), int(rec[2]), float(rec[3])
                if min(k, i, a) < 0:
                    raise ValueError("negative index")
                flows[k, i, a] = x
            except (IndexError, ValueError) as exc:
                raise ObservationError(f"{flows_path}:{line}: bad record ({exc})") from None
    if np.isnan(flows).any():
        raise ObservationError(f"{flows_path}: missing (od_index, player, arc) entries")
    return ObservationSet(net, N, capacity, ods, flows)


@dataclass(frozen=True)
class ParameterBounds:
    L1: np.ndarray
    U1: np.ndarray
    L2: np.ndarray
    U2: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=float) for k in ("L1", "U1", "L2", "U2")]
        for name, a in zip(("L1", "U1", "L2", "U2"), arrs):
            object.__setattr__(self, name, a)
        if len({a.shape for a in arrs}) != 1:
            raise ValueError("bounds must share one length")
        if not (np.all(arrs[0] > 0) and np.all(arrs[2] > 0)):
            raise ValueError("lower bounds must be positive")
        if np.any(arrs[0] > arrs[1]) or np.any(arrs[2] > arrs[3]):
            raise ValueError("lower bound exceeds upper bound")

    @classmethod
    def uniform(cls, n: int, c_int=(1.0, 5.0), c_base=(5.0, 20.0)) -> "ParameterBounds":
        return cls(np.full(n, c_int[0]), np.full(n, c_int[1]), np.full(n, c_base[0]), np.full(n, c_base[1]))

    @property
    def n(self) -> int:
        return self.L1.size


@dataclass
class ResidualIndex:
    """Positions of every variable family inside the compiled program."""

    mode: CostMode
    c_int: np.ndarray  # (P, n), P = 1 (shared) or N
    c_base: np.ndarray
    v: np.ndarray  # (K, N, m)
    u: np.ndarray  # (K, N, n)
    ubar: np.ndarray  # (K, n)
    stationarity: object
    comp_nonneg: object
    comp_capacity: object
    stationarity_block: AffineBlock = field(repr=False, default=None)
    families: dict = field(default_factory=dict)


@dataclass
class RecoveredParameters:
    params: CostParameterization
    io_objective: float
    v: np.ndarray
    u: np.ndarray
    ubar: np.ndarray
    lp_status: LPStatus = LPStatus.OPTIMAL
    diagnostics: dict = field(default_factory=dict)

    @property
    def negative_objective_flag(self) -> bool:
        return self.io_objective < NEGATIVE_OBJECTIVE_TOL


def _ranges(start: int, shape) -> np.ndarray:
    return start + np.arange(int(np.prod(shape))).reshape(shape)


def build_residual_program(obs: ObservationSet, bounds: ParameterBounds, mode="shared"):
    """Compile the residual program; returns ``(LinearProgram, ResidualIndex)``."""
    mode = CostMode.parse(mode)
    obs.validate()
    net = obs.network
    K, N, n, m = obs.K, obs.player_count, net.arc_count, net.node_count
    if bounds.n != n:
        raise ValueError(f"bounds cover {bounds.n} arcs, network has {n}")
    X = np.where(obs.flows < COEF_ZERO, 0.0, obs.flows)
    P = 1 if mode is CostMode.SHARED else N

    b = LPBuilder()
    sc = b.add_variables(P * n, np.tile(bounds.L1, P), np.tile(bounds.U1, P), family="c_int")
    sb = b.add_variables(P * n, np.tile(bounds.L2, P), np.tile(bounds.U2, P), family="c_base")
    idx_c = _ranges(sc.start, (P, n))
    idx_b = _ranges(sb.start, (P, n))
    sv = b.add_variables(K * N * m, -np.inf, np.inf, family="v")
    su = b.add_variables(K * N * n, 0.0, np.inf, family="u")
    sub = b.add_variables(K * n, 0.0, np.inf, family="ubar")
    idx_v = _ranges(sv.start, (K, N, m))
    idx_u = _ranges(su.start, (K, N, n))
    idx_ub = _ranges(sub.start, (K, n))

    # stationarity rows, one per (k, i, a), ordered k-major
    q = K * N * n
    row = np.arange(q).reshape(K, N, n)
    S = X.sum(axis=1, keepdims=True)
    coef_c = X + S  # 2 x_i + sum_{j != i} x_j
    player = np.broadcast_to(np.arange(N)[None, :, None] if P > 1 else np.zeros((1, N, 1), dtype=int), (K, N, n))
    arc = np.broadcast_to(np.arange(n)[None, None, :], (K, N, n))
    tails = np.broadcast_to(net.tails - 1, (K, N, n))
    heads = np.broadcast_to(net.heads - 1, (K, N, n))
    kk = np.broadcast_to(np.arange(K)[:, None, None], (K, N, n))
    ii = np.broadcast_to(np.arange(N)[None, :, None], (K, N, n))
    rows = np.concatenate([row.ravel()] * 6)
    cols = np.concatenate([
        idx_c[player, arc].ravel(),
        idx_b[player, arc].ravel(),
        idx_v[kk, ii, tails].ravel(),  # (D'v)_a = v_head - v_tail
        idx_v[kk, ii, heads].ravel(),
        idx_u.ravel(),
        idx_ub[kk, arc].ravel(),
    ])
    vals = np.concatenate([
        coef_c.ravel(),
        np.ones(q),
        -np.ones(q),
        np.ones(q),
        -np.ones(q),
        np.ones(q),
    ])
    stat_block = AffineBlock(rows, cols, vals, np.zeros(q))
    g_stat = linearize_l1_group(b, stat_block, family="split_stationarity")

    # x_i' u_i, one scalar per (k, i)
    r1 = np.repeat(np.arange(K * N), n)
    g_c1 = linearize_l1_group(
        b, AffineBlock(r1, idx_u.ravel(), X.ravel(), np.zeros(K * N)), family="split_comp_nonneg"
    )
    # (alpha - sum_j x_j)' ubar, one scalar per k
    slack = obs.capacity[None, :] - S[:, 0, :]
    slack[np.abs(slack) < COEF_ZERO] = 0.0
    r2 = np.repeat(np.arange(K), n)
    g_c2 = linearize_l1_group(
        b, AffineBlock(r2, idx_ub.ravel(), slack.ravel(), np.zeros(K)), family="split_comp_capacity"
    )

    lp = b.build()
    index = ResidualIndex(
        mode=mode, c_int=idx_c, c_base=idx_b, v=idx_v, u=idx_u, ubar=idx_ub,
        stationarity=g_stat, comp_nonneg=g_c1, comp_capacity=g_c2,
        stationarity_block=stat_block,
        families={name: b.family_size(name) for name in b.families},
    )
    return lp, index


def evaluate_residual_objective(obs: ObservationSet, params: CostParameterization, v, u, ubar) -> float:
    """Direct evaluation of the residual objective at given parameters and duals."""
    D = incidence_matrix(obs.network).astype(float)
    X = obs.flows
    N = obs.player_count
    params = params.for_players(N)
    total = 0.0
    for k in range(obs.K):
        S = X[k].sum(axis=0)
        stat = params.c_int * (X[k] + S) + params.c_base + v[k] @ D - u[k] + ubar[k]
        total += np.abs(stat).sum()
        total += np.abs(np.einsum("ij,ij->i", X[k], u[k])).sum()
        total += abs((obs.capacity - S) @ ubar[k])
    return float(total)


def recover_parameters(obs: ObservationSet, bounds: ParameterBounds, mode="shared",
                       method: str = "auto") -> RecoveredParameters:
    t0 = time.perf_counter()
    lp, index = build_residual_program(obs, bounds, mode)
    t1 = time.perf_counter()
    res = solve_lp(lp, method=method)
    t2 = time.perf_counter()
    if not res.optimal:
        raise ResidualProgramError(res)
    rec = _extract(obs, bounds, lp, index, res)
    rec.diagnostics["build_seconds"] = t1 - t0
    rec.diagnostics["solve_seconds"] = t2 - t1
    return rec


def _extract(obs, bounds, lp, index: ResidualIndex, res: LPResult) -> RecoveredParameters:
    z = res.z
    N = obs.player_count
    c_int = np.clip(z[index.c_int], bounds.L1, bounds.U1)
    c_base = np.clip(z[index.c_base], bounds.L2, bounds.U2)
    if index.mode is CostMode.SHARED:
        params = CostParameterization.shared(c_int[0], c_base[0], N)
    else:
        params = CostParameterization.per_player(c_int, c_base)
    rec = RecoveredParameters(
        params=params,
        io_objective=float(res.objective_value),
        v=z[index.v],
        u=np.maximum(z[index.u], 0.0),
        ubar=np.maximum(z[index.ubar], 0.0),
        lp_status=res.status,
        diagnostics=dict(res.diagnostics),
    )
    rec.diagnostics["variable_counts"] = actual_variable_count(lp, index)
    if rec.negative_objective_flag:
        log.warning("residual objective %.3e below zero", rec.io_objective)
    return rec


def predicted_variable_count(m: int, N: int, a: Optional[int] = None, mode="shared", graph_kind: str = "grid") -> int:
    """Closed-form variable counts of the reference implementation, in exact integers."""
    mode = CostMode.parse(mode)
    kind = graph_kind.lower()
    if kind == "grid":
        r = math.isqrt(m)
        if r * r != m:
            raise ValueError(f"grid node count must be a perfect square, got {m}")
        m2, m3 = m * m, m * m * m
        m52, m32 = m2 * r, m * r
        if mode is CostMode.SHARED:
            return (13 * N * m3 - 12 * N * m52 - 13 * N * m2 + 12 * N * m32
                    + 16 * m3 - 16 * m52 - 16 * m2 + 16 * m32)
        return (21 * N * m3 - 20 * N * m52 - 21 * N * m2 + 20 * N * m32
                + 8 * m3 - 8 * m52 - 8 * m2 + 8 * m32)
    if kind == "general":
        if a is None:
            raise ValueError("general graphs need the arc count")
        if mode is CostMode.SHARED:
            return 3 * a * N * m**2 - 3 * a * N * m + m**3 * N - m**2 * N + 4 * a * m**2 - 4 * a * m
        return 5 * a * N * m**2 - 5 * a * N * m + m**3 * N - m**2 * N + 2 * a * m**2 - 2 * a * m
    raise ValueError(f"unknown graph kind {graph_kind!r}")


def actual_variable_count(lp: LinearProgram, index: ResidualIndex) -> dict:
    counts = {
        "c_int": int(index.c_int.size),
        "c_base": int(index.c_base.size),
        "v": int(index.v.size),
        "u": int(index.u.size),
        "ubar": int(index.ubar.size),
        "split_stationarity": index.families.get("split_stationarity", 0),
        "split_comp_nonneg": index.families.get("split_comp_nonneg", 0),
        "split_comp_capacity": index.families.get("split_comp_capacity", 0),
    }
    counts["total"] = sum(counts.values())
    if counts["total"] != lp.c.size:
        raise AssertionError(f"family counts {counts['total']} != LP dimension {lp.c.size}")
    return counts
