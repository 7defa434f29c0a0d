"""Forward solver for the routing game and an independent check for shared costs.

:func:`solve_equilibrium` applies a damped semismooth Newton method to the
Fischer-Burmeister reformulation of the complementarity system

    0 <= x_i  _|_  C_i (2 x_i + sum_{j != i} x_j) + cbar_i + D' v_i + ubar >= 0
    0 <= alpha - sum_j x_j  _|_  ubar >= 0
    D x_i = f,  v_i free.

The conservation rows of ``D`` are linearly dependent, so each player's
potential ``v_i`` is pinned to zero at the highest-numbered node and that
node's conservation row is dropped.

:func:`solve_potential_oracle` minimizes the exact potential of the shared-cost
game by simplicial decomposition, a conditional-gradient method whose
subproblems are linear programs over the joint feasible set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph, csr_matrix

from .game import (
    CostMode,
    CostParameterization,
    EquilibriumSolution,
    GameInstance,
    eval_F,
    interaction_matrix,
    kkt_residuals,
    recover_nonneg_duals,
)
from .lp import LPBuilder, LPStatus, solve_lp

__all__ = [
    "InfeasibleError",
    "DidNotConvergeError",
    "SolverSettings",
    "FeasibilityReport",
    "START_POINTS",
    "feasibility_check",
    "solve_equilibrium",
    "solve_from_all_starts",
    "solve_potential_oracle",
    "OracleResult",
]

log = logging.getLogger(__name__)

START_POINTS = ("zero-restored", "shortest-hop-split", "myopic-shortest-path")
# cheapest first on the benchmark grids
DEFAULT_START_ORDER = ("myopic-shortest-path", "shortest-hop-split", "zero-restored")
_ACTIVE_TOL = 1e-7
_REFINE_FACTOR = 1e-4
_REFINE_STEPS = 3
_PIVOT_SHIFT = 1e-14
_KINK = 1.0 / math.sqrt(2.0) - 1.0


class InfeasibleError(RuntimeError):
    """No flow satisfies conservation together with the joint capacity."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DidNotConvergeError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-8
    max_iterations: int = 500
    start_points: tuple = DEFAULT_START_ORDER
    line_search_shrink: float = 0.5
    armijo_constant: float = 1e-4
    run_all_starts: bool = False
    polish: bool = True
    trace: Optional[Callable[[str], None]] = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.start_points:
            raise ValueError("at least one start point is required")
        unknown = set(self.start_points) - set(START_POINTS)
        if unknown:
            raise ValueError(f"unknown start points {sorted(unknown)}")
        if not 0 < self.line_search_shrink < 1 or not 0 < self.armijo_constant < 1:
            raise ValueError("line_search_shrink and armijo_constant must lie in (0, 1)")


# --------------------------------------------------------------------------
# feasibility


@dataclass
class FeasibilityReport:
    feasible: bool
    violation: float
    point: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None

    def __bool__(self):
        return self.feasible


def _joint_set_builder(instance: GameInstance, elastic: bool):
    N, n = instance.player_count, instance.n
    b = LPBuilder()
    xs = b.add_variables(N * n, 0.0, np.inf, 0.0, family="x")
    ss = b.add_variables(n, 0.0, np.inf, 0.0, family="slack")
    D = instance.D
    dr, dc = np.nonzero(D)
    dv = D[dr, dc]
    for i in range(N):
        b.add_rows(dr, xs.start + i * n + dc, dv, instance.f)
    rows = np.concatenate([np.tile(np.arange(n), N), np.arange(n)])
    cols = np.concatenate([xs.start + np.arange(N * n), ss.start + np.arange(n)])
    b.add_rows(rows, cols, np.ones(N * n + n), instance.capacity)
    if elastic:
        r = b.nrows
        ep = b.add_variables(r, 0.0, np.inf, 1.0, family="elastic")
        em = b.add_variables(r, 0.0, np.inf, 1.0, family="elastic")
        k = np.arange(r)
        b.add_entries(np.concatenate([k, k]), np.concatenate([ep.start + k, em.start + k]),
                      np.concatenate([np.ones(r), -np.ones(r)]))
    return b, xs


def feasibility_check(instance: GameInstance) -> FeasibilityReport:
    """Phase-one LP over the joint set; the certificate is the phase-one dual ray."""
    b, xs = _joint_set_builder(instance, elastic=True)
    res = solve_lp(b.build())
    if not res.optimal:
        raise RuntimeError(f"phase-one LP failed: {res.status}")
    viol = float(res.objective_value)
    if viol <= 1e-9:
        x = np.maximum(res.z[xs].reshape(instance.player_count, instance.n), 0.0)
        return FeasibilityReport(True, viol, point=x)
    return FeasibilityReport(False, viol, certificate=res.y)


def _maxflow_feasible(instance: GameInstance) -> Optional[bool]:
    """Exact joint-feasibility test for a common OD pair, ``None`` if undecided.

    Every player routes one unit between the same nodes, so a joint flow
    exists iff the aggregate max flow under capacities ``alpha`` reaches N;
    split equally, the aggregate flow is feasible for each player. Capacities
    are scaled to integers when a small power of ten makes them exact.
    """
    cap, N = instance.capacity, instance.player_count
    for s in (1, 2, 4, 10, 100, 1000):
        scaled = cap * s
        if np.all(np.abs(scaled - np.round(scaled)) <= 1e-12 * np.maximum(1.0, scaled)) and N * s < 2**30:
            break
    else:
        return None
    net = instance.network
    t, h = net.tails - 1, net.heads - 1
    caps = np.minimum(np.round(scaled), 2**30).astype(np.int32)
    G = csr_matrix((caps, (t, h)), shape=(net.node_count, net.node_count))
    G.sum_duplicates()
    value = csgraph.maximum_flow(G, instance.od.origin - 1, instance.od.destination - 1).flow_value
    return bool(value >= N * s)


def _require_feasible(instance: GameInstance) -> None:
    if _maxflow_feasible(instance):
        return
    rep = feasibility_check(instance)
    if not rep.feasible:
        raise InfeasibleError(f"no feasible flow for OD {tuple(instance.od)}", rep)


# --------------------------------------------------------------------------
# start points


def _shortest_hop_split(instance: GameInstance) -> np.ndarray:
    net = instance.network
    m = net.node_count
    t, h = net.tails - 1, net.heads - 1
    G = csr_matrix((np.ones(len(t)), (t, h)), shape=(m, m))
    o, d = instance.od.origin - 1, instance.od.destination - 1
    dist = csgraph.shortest_path(G, unweighted=True, indices=[o, d], directed=True)
    dist_back = csgraph.shortest_path(G.T.tocsr(), unweighted=True, indices=[d], directed=True)[0]
    from_o = dist[0]
    total = from_o[d]
    on_dag = np.isfinite(from_o[t]) & np.isfinite(dist_back[h]) & (from_o[t] + 1 + dist_back[h] == total)
    # count shortest paths forward from o and backward from d
    order = np.argsort(from_o)
    sigma_o = np.zeros(m)
    sigma_o[o] = 1.0
    for v in order:
        if not np.isfinite(from_o[v]):
            break
        for a in np.flatnonzero(on_dag & (t == v)):
            sigma_o[h[a]] += sigma_o[v]
    sigma_d = np.zeros(m)
    sigma_d[d] = 1.0
    for v in np.argsort(dist_back):
        if not np.isfinite(dist_back[v]):
            break
        for a in np.flatnonzero(on_dag & (h == v)):
            sigma_d[t[a]] += sigma_d[v]
    flow = np.where(on_dag, sigma_o[t] * sigma_d[h], 0.0) / sigma_o[d]
    return np.tile(flow, (instance.player_count, 1))


def _shortest_path_tree(instance: GameInstance, cost: np.ndarray):
    net = instance.network
    m = net.node_count
    t, h = net.tails - 1, net.heads - 1
    o, d = instance.od.origin - 1, instance.od.destination - 1
    # parallel arcs: keep the cheapest one in the sparse graph
    best = {}
    for a in range(len(t)):
        key = (t[a], h[a])
        if key not in best or cost[a] < cost[best[key]]:
            best[key] = a
    arcs = np.array(sorted(best.values()))
    G = csr_matrix((cost[arcs], (t[arcs], h[arcs])), shape=(m, m))
    dist, pred = csgraph.dijkstra(G, indices=o, return_predecessors=True)
    flow = np.zeros(len(t))
    v = d
    while v != o:
        u = pred[v]
        flow[best[(u, v)]] = 1.0
        v = u
    return flow, dist


def _myopic(instance: GameInstance, params: CostParameterization):
    rows, pots = [], []
    for i in range(instance.player_count):
        flow, dist = _shortest_path_tree(instance, params.c_base[i])
        rows.append(flow)
        pots.append(-np.where(np.isfinite(dist), dist, 0.0))
    return np.array(rows), np.array(pots)


def _start(name: str, instance: GameInstance, params: CostParameterization):
    N, m = instance.player_count, instance.m
    if name == "zero-restored":
        rep = feasibility_check(instance)
        if not rep.feasible:
            raise InfeasibleError(f"no feasible flow for OD {tuple(instance.od)}", rep)
        return rep.point, np.zeros((N, m))
    if name == "shortest-hop-split":
        return _shortest_hop_split(instance), np.zeros((N, m))
    return _myopic(instance, params)


# --------------------------------------------------------------------------
# Fischer-Burmeister Newton


def _fb(a, b):
    r = np.hypot(a, b)
    phi = r - a - b
    small = r < 1e-300
    with np.errstate(invalid="ignore", divide="ignore"):
        da = np.where(small, _KINK, a / np.where(small, 1.0, r) - 1.0)
        db = np.where(small, _KINK, b / np.where(small, 1.0, r) - 1.0)
    return phi, da, db


_TEMPLATE_CACHE: dict = {}
_TEMPLATE_CACHE_SIZE = 8


def _jacobian_template(network, N, original, params, Dr):
    """Fixed sparsity pattern of the Newton matrix, shared by every OD pair.

    Rows are ``[diag(db1) JG + diag(da1) Jx ; Jeq ; diag(da3) Jslack + diag(db3) Jub]``
    so each nonzero is stored as ``c_a * a[row] + c_b * b[row] + c_0``. A
    diagonal shift far below the pivot threshold is folded into ``c_0``; it
    keeps SuperLU away from exact zero pivots at degenerate points.
    """
    key = (id(network), N, id(original))
    hit = _TEMPLATE_CACHE.get(key)
    if hit is not None and hit[0] is network and hit[1] is original:
        return hit[2]
    n = network.arc_count
    nx, nv = N * n, Dr.shape[0] * N
    size = nx + nv + n
    Dr = sp.csr_matrix(Dr)
    M = sp.csr_matrix(interaction_matrix(params, N))
    JG = sp.hstack([M, sp.block_diag([Dr.T] * N), sp.vstack([sp.identity(n)] * N)])
    Jx = sp.hstack([sp.identity(nx), sp.csr_matrix((nx, nv + n))])
    Jeq = sp.hstack([sp.block_diag([Dr] * N), sp.csr_matrix((nv, nv + n))])
    Js = sp.hstack([-sp.hstack([sp.identity(n)] * N), sp.csr_matrix((n, nv + n))])
    Ju = sp.hstack([sp.csr_matrix((n, nx + nv)), sp.identity(n)])
    zero_x = sp.csr_matrix((nx, size))
    zero_v = sp.csr_matrix((nv, size))
    zero_n = sp.csr_matrix((n, size))
    parts = {
        "a": sp.vstack([Jx, zero_v, Js]),
        "b": sp.vstack([JG, zero_v, Ju]),
        "0": sp.vstack([zero_x, Jeq, zero_n]),
    }
    scale = max(max(abs(P).max() for P in parts.values()), 1.0)
    parts["0"] = parts["0"] + _PIVOT_SHIFT * scale * sp.identity(size)
    pattern = (abs(parts["a"]) + abs(parts["b"]) + abs(parts["0"])).tocsc()
    pattern.data[:] = 1.0
    pattern.sort_indices()
    rows = pattern.indices
    cols = np.repeat(np.arange(size), np.diff(pattern.indptr))
    coef = {k: np.asarray(P.tocsr()[rows, cols]).ravel() for k, P in parts.items()}
    out = (pattern, rows, coef)
    if len(_TEMPLATE_CACHE) >= _TEMPLATE_CACHE_SIZE:
        _TEMPLATE_CACHE.pop(next(iter(_TEMPLATE_CACHE)))
    _TEMPLATE_CACHE[key] = (network, original, out)
    return out


class _System:
    """Residual map and Jacobian in internally rescaled cost units.

    Dividing every cost by the mean base cost leaves the flows unchanged and
    divides the duals by the same factor; it balances the two sides of each
    complementarity pair, which the merit function is sensitive to.
    """

    def __init__(self, instance: GameInstance, params: CostParameterization):
        self.inst = instance
        self.original = params
        self.scale = float(np.mean(params.c_base))
        self.params = params.scaled(1.0 / self.scale)
        N, n, m = instance.player_count, instance.n, instance.m
        self.N, self.n, self.m = N, n, m
        self.Dr = instance.D[:-1]
        self.fr = instance.f[:-1]
        self.nx, self.nv = N * n, N * (m - 1)
        self.size = self.nx + self.nv + n
        self._pattern, self._rows, self._coef = _jacobian_template(instance.network, N, params, self.params, self.Dr)
    def pack(self, x, v, ubar):
        """Stack a point given in original cost units."""
        v = np.asarray(v, dtype=float) / self.scale
        v = v - v[:, -1:]
        return np.concatenate([np.ravel(x), v[:, :-1].ravel(), np.ravel(ubar) / self.scale])

    def unpack(self, w):
        N, n, m = self.N, self.n, self.m
        x = w[: self.nx].reshape(N, n)
        v = np.zeros((N, m))
        v[:, :-1] = w[self.nx: self.nx + self.nv].reshape(N, m - 1)
        return x, v, w[self.nx + self.nv:]

    def residual(self, w, with_jacobian=False):
        x, v, ubar = self.unpack(w)
        G = (eval_F(self.params, x, self.N) + v @ self.inst.D + ubar).ravel()
        phi1, da1, db1 = _fb(x.ravel(), G)
        eq = (x @ self.Dr.T - self.fr).ravel()
        slack = self.inst.capacity - x.sum(axis=0)
        phi3, da3, db3 = _fb(slack, ubar)
        Phi = np.concatenate([phi1, eq, phi3])
        if not with_jacobian:
            return Phi
        zeros = np.zeros(self.nv)
        a = np.concatenate([da1, zeros, da3])[self._rows]
        b = np.concatenate([db1, zeros, db3])[self._rows]
        J = self._pattern.copy()
        J.data = self._coef["a"] * a + self._coef["b"] * b + self._coef["0"]
        return Phi, J


def _lu_step(J, rhs):
    """Solve ``J d = rhs``; ``None`` when J is singular to working precision."""
    try:
        lu = spla.splu(J)
    except RuntimeError:
        return None
    diag = np.abs(lu.U.diagonal())
    if diag.min() <= 1e-11 * diag.max():
        return None
    return lu.solve(rhs)


def _direction(J, Phi, psi):
    """Semismooth Newton step, or a Levenberg-Marquardt step when J is near singular."""
    grad = J.T @ Phi
    d = _lu_step(J, -Phi)
    if d is not None and np.all(np.isfinite(d)) and grad @ d <= -1e-10 * (d @ d) ** 1.05:
        return d, grad
    # duals are not unique when capacity binds
    mu = max(math.sqrt(2.0 * psi), 1e-14)
    H = (J.T @ J + mu * sp.identity(J.shape[1])).tocsc()
    return spla.splu(H).solve(-grad), grad


def _newton(system: _System, w0: np.ndarray, settings: SolverSettings, label: str):
    inst, params, unscale = system.inst, system.original, system.scale
    tol = settings.tolerance
    w = w0.copy()
    Phi, J = system.residual(w, with_jacobian=True)
    psi = 0.5 * Phi @ Phi
    best = None
    it = 0
    refine = 0
    for it in range(settings.max_iterations + 1):
        if np.max(np.abs(Phi)) <= tol:
            x, v, ubar = system.unpack(w)
            sol = _package(inst, params, x, v, ubar, unscale)
            if best is None or sol.kkt_residual < best.kkt_residual:
                best = sol
            # a few extra steps are nearly free at quadratic convergence
            if best.kkt_residual <= tol * _REFINE_FACTOR or (best.kkt_residual <= tol and refine >= _REFINE_STEPS):
                break
            if best.kkt_residual <= tol:
                refine += 1
        if it == settings.max_iterations:
            break
        d, grad = _direction(J, Phi, psi)
        slope = grad @ d
        t = 1.0
        while True:
            w_new = w + t * d
            Phi_new = system.residual(w_new)
            psi_new = 0.5 * Phi_new @ Phi_new
            if psi_new <= psi + settings.armijo_constant * t * slope or t < 1e-12:
                break
            t *= settings.line_search_shrink
        if settings.trace is not None:
            settings.trace(
                f"{label} it={it} merit={psi:.6e} step={t:.3e} |Phi|inf={np.max(np.abs(Phi)):.3e}"
            )
        if t < 1e-12 and psi_new >= psi:
            break
        w = w_new
        Phi, J = system.residual(w, with_jacobian=True)
        psi = 0.5 * Phi @ Phi
    if best is None or best.kkt_residual > tol:
        x, v, ubar = system.unpack(w)
        sol = _package(inst, params, x, v, ubar, unscale)
        if best is None or sol.kkt_residual < best.kkt_residual:
            best = sol
    best.iterations = it
    best.start_point = label
    best.converged = best.kkt_residual <= tol
    best.diagnostics["merit"] = float(psi)
    return best


def _package(inst, params, x, v, ubar, unscale=1.0) -> EquilibriumSolution:
    """Build a solution for the unscaled game; ``params`` are the caller's originals."""
    x = np.array(x, dtype=float)
    v = unscale * np.array(v, dtype=float)
    ubar = unscale * np.array(ubar, dtype=float)
    u = recover_nonneg_duals(inst, params, x, v, ubar)
    sol = EquilibriumSolution(x=x, v=v, u=u, ubar=ubar)
    rep = kkt_residuals(inst, params, sol)
    sol.kkt_residual = rep.max
    sol.diagnostics["kkt"] = rep
    return sol


def _polish(inst: GameInstance, params: CostParameterization, sol: EquilibriumSolution,
            tol: float) -> EquilibriumSolution:
    """Re-solve the KKT equations exactly on the active set guessed from ``sol``.

    With zero-flow arcs and binding capacities fixed, the complementarity system
    is linear. Flows that Newton leaves at ~1e-10 on unused arcs become exact
    zeros, which keeps downstream residual programs sparse and well scaled. The
    polished point is kept when its residual is within ``tol`` or no worse than the Newton point.
    """
    N, n, m = inst.player_count, inst.n, inst.m
    X, U, ub = sol.x, sol.u, sol.ubar
    slack = inst.capacity - X.sum(axis=0)
    # degenerate pairs (both sides tiny) go to the side whose primal term is ~0
    zero = (X < U) | (X <= _ACTIVE_TOL)
    bind = (ub > slack) | (slack <= _ACTIVE_TOL)
    free = np.flatnonzero(~zero.ravel())
    act = np.flatnonzero(zero.ravel())
    B = np.flatnonzero(bind)
    nf, na, nb, nv = free.size, act.size, B.size, N * (m - 1)
    M = interaction_matrix(params, N)
    cb = params.c_base.ravel()
    Dr = inst.D[:-1]
    rows = N * n + nv + nb
    cols = nf + nv + na + nb
    A = np.zeros((rows, cols))
    rhs = np.zeros(rows)
    # stationarity: M x + cbar + D'v - u + ubar = 0
    A[: N * n, :nf] = M[:, free]
    for i in range(N):
        A[i * n:(i + 1) * n, nf + i * (m - 1): nf + (i + 1) * (m - 1)] = Dr.T
    A[act, nf + nv + np.arange(na)] = -1.0
    for j, a in enumerate(B):
        A[a + n * np.arange(N), nf + nv + na + j] = 1.0
    rhs[: N * n] = -cb
    # conservation, last node dropped
    for i in range(N):
        r0 = N * n + i * (m - 1)
        sel = free[(free >= i * n) & (free < (i + 1) * n)]
        A[r0: r0 + m - 1, np.searchsorted(free, sel)] = Dr[:, sel - i * n]
        rhs[r0: r0 + m - 1] = inst.f[:-1]
    # binding capacities
    for j, a in enumerate(B):
        A[N * n + nv + j, np.searchsorted(free, free[free % n == a])] = 1.0
        rhs[N * n + nv + j] = inst.capacity[a]
    # minimum-norm correction of the Newton point: components the equations
    # leave undetermined (potentials off the used subgraph, degenerate
    # multipliers) keep their Newton values
    V0 = sol.v - sol.v[:, -1:]
    z0 = np.concatenate([X.ravel()[free], V0[:, :-1].ravel(), U.ravel()[act], ub[B]])
    try:
        z = z0 + np.linalg.lstsq(A, rhs - A @ z0, rcond=None)[0]
    except np.linalg.LinAlgError:
        return sol
    x = np.zeros(N * n)
    x[free] = z[:nf]
    v = np.zeros((N, m))
    v[:, :-1] = z[nf: nf + nv].reshape(N, m - 1)
    ubar = np.zeros(n)
    ubar[B] = z[nf + nv + na:]
    cand = _package(inst, params, x.reshape(N, n), v, ubar)
    if cand.kkt_residual <= max(sol.kkt_residual, tol):
        cand.iterations, cand.start_point, cand.converged = sol.iterations, sol.start_point, sol.converged
        cand.diagnostics = {**sol.diagnostics, "kkt": cand.diagnostics["kkt"], "polished": True,
                            "unpolished_residual": sol.kkt_residual}
        return cand
    sol.diagnostics["polished"] = False
    return sol


def _check_inputs(instance: GameInstance, params: CostParameterization) -> CostParameterization:
    params = params.for_players(instance.player_count)
    if params.arc_count != instance.n:
        raise ValueError(f"parameters cover {params.arc_count} arcs, network has {instance.n}")
    return params


def solve_from_all_starts(instance, params, settings: SolverSettings = SolverSettings()) -> list:
    params = _check_inputs(instance, params)
    _require_feasible(instance)
    system = _System(instance, params)
    out = []
    for name in settings.start_points:
        x0, v0 = _start(name, instance, params)
        sol = _newton(system, system.pack(x0, v0, np.zeros(instance.n)), settings, name)
        out.append(_polish(instance, params, sol, settings.tolerance) if settings.polish and sol.converged else sol)
    return out


def solve_equilibrium(instance: GameInstance, params: CostParameterization,
                      settings: SolverSettings = SolverSettings()) -> EquilibriumSolution:
    """Solve one game; tries the configured start points in order.

    Raises :class:`InfeasibleError` when the joint set is empty. When no start
    point reaches the tolerance the best iterate is returned with
    ``converged=False``.
    """
    params = _check_inputs(instance, params)
    if settings.run_all_starts:
        sols = solve_from_all_starts(instance, params, settings)
        ok = [s for s in sols if s.converged]
        best = min(ok or sols, key=lambda s: s.kkt_residual)
        if len(ok) > 1:
            spread = max(float(np.max(np.abs(a.x - b.x))) for a in ok for b in ok)
        else:
            spread = float("nan")
        best.diagnostics["multistart_spread"] = spread
        best.diagnostics["starts_converged"] = [s.start_point for s in ok]
        return best

    _require_feasible(instance)
    system = _System(instance, params)
    best = None
    tried = []
    for name in settings.start_points:
        x0, v0 = _start(name, instance, params)
        sol = _newton(system, system.pack(x0, v0, np.zeros(instance.n)), settings, name)
        if settings.polish and sol.converged:
            sol = _polish(instance, params, sol, settings.tolerance)
        tried.append(name)
        if best is None or sol.kkt_residual < best.kkt_residual:
            best = sol
        if sol.converged:
            break
    best.diagnostics["starts_tried"] = tried
    if not best.converged:
        log.warning("OD %s: no start point converged (best residual %.3e)", tuple(instance.od), best.kkt_residual)
    return best


# --------------------------------------------------------------------------
# potential oracle


@dataclass
class OracleResult:
    x: np.ndarray
    gap: float
    iterations: int
    vertices: int


def _simplex_qp(Q, q, lam, tol=1e-13, max_iter=500):
    """Minimize 1/2 l'Ql + q'l over the unit simplex by a primal active-set method."""
    lam = lam.copy()
    active = lam > 0
    for _ in range(max_iter):
        P = np.flatnonzero(active)
        g = Q @ lam + q
        # null-space step on the face spanned by P
        if len(P) > 1:
            Z = np.vstack([np.eye(len(P) - 1), -np.ones((1, len(P) - 1))])
            H = Z.T @ Q[np.ix_(P, P)] @ Z
            gz = Z.T @ g[P]
            evals, evecs = np.linalg.eigh(H)
            cutoff = 1e-12 * max(1.0, np.abs(evals).max())
            coef = evecs.T @ gz
            flat = evals <= cutoff
            if np.any(np.abs(coef[flat]) > 1e-14 * max(1.0, np.abs(gz).max())):
                step_z = -(evecs[:, flat] @ coef[flat])
                full = np.inf
            else:
                step_z = -(evecs[:, ~flat] @ (coef[~flat] / evals[~flat]))
                full = 1.0
            dP = Z @ step_z
        else:
            dP = np.zeros(len(P))
            full = 1.0
        if np.max(np.abs(dP), initial=0.0) > 1e-15:
            neg = dP < 0
            ratios = np.where(neg, lam[P] / np.where(neg, -dP, 1.0), np.inf)
            t = min(full, ratios.min())
            if not np.isfinite(t):
                raise RuntimeError("unbounded master problem")
            lam[P] += t * dP
            if t < full:
                hit = P[np.argmin(ratios)]
                lam[hit] = 0.0
                active[hit] = False
                lam[P] = np.maximum(lam[P], 0.0)
                lam /= lam.sum()
                continue
            lam = np.maximum(lam, 0.0)
            lam /= lam.sum()
        g = Q @ lam + q
        nu = g[P].mean()
        viol = np.where(active, np.inf, g - nu)
        j = int(np.argmin(viol))
        if viol[j] >= -tol * max(1.0, abs(nu)):
            return lam
        active[j] = True
    return lam


def solve_potential_oracle(instance: GameInstance, params: CostParameterization,
                           gap_tol: float = 1e-9, max_iterations: int = 500) -> OracleResult:
    """Minimize the exact potential over the joint set (shared costs only)."""
    if params.mode is not CostMode.SHARED:
        raise ValueError("the potential oracle applies only to shared costs")
    params = _check_inputs(instance, params)
    N, n = instance.player_count, instance.n
    rep = feasibility_check(instance)
    if not rep.feasible:
        raise InfeasibleError(f"no feasible flow for OD {tuple(instance.od)}", rep)
    builder, xs = _joint_set_builder(instance, elastic=False)
    lp = builder.build()
    M = interaction_matrix(params, N)
    cb = params.c_base.ravel()

    def vertex(grad):
        lp.c = np.zeros(lp.c.size)
        lp.c[xs] = grad
        res = solve_lp(lp)
        if res.status is not LPStatus.OPTIMAL:
            raise DidNotConvergeError(f"vertex subproblem failed: {res.status}")
        return res.z[xs]

    x = rep.point.ravel()
    V = [vertex(eval_F(params, x, N))]
    lam = np.array([1.0])
    x = V[0]
    gap = np.inf
    for it in range(1, max_iterations + 1):
        g = eval_F(params, x, N)
        y = vertex(g)
        gap = float(g @ (x - y))
        if gap <= gap_tol:
            return OracleResult(x.reshape(N, n), max(gap, 0.0), it, len(V))
        if not any(np.array_equal(y, w) for w in V):
            V.append(y)
            lam = np.append(lam, 0.0)
        Vm = np.array(V).T
        Q = Vm.T @ M @ Vm
        q = Vm.T @ cb
        lam = _simplex_qp(0.5 * (Q + Q.T), q, lam)
        keep = lam > 0
        V = [w for w, k in zip(V, keep) if k]
        lam = lam[keep] / lam[keep].sum()
        x = np.array(V).T @ lam
    raise DidNotConvergeError(f"potential oracle stalled with gap {gap:.3e}")
