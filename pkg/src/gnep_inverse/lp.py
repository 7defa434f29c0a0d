"""Linear programs in equality-plus-bounds form, a sparse builder, and solvers.

Two engines sit behind :func:`solve_lp`: the in-package revised simplex
(:mod:`gnep_inverse.simplex`, dense, Bland's rule) for small programs and the
HiGHS dual simplex shipped with SciPy for the large residual programs. Every
optimal result is checked against the same primal/dual certificate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import simplex

__all__ = [
    "LPStatus",
    "LinearProgram",
    "LPResult",
    "LPBuilder",
    "AffineBlock",
    "L1Group",
    "solve_lp",
    "linearize_l1_group",
    "certificate",
    "write_mps",
]

CONTRACT_TOL = 1e-9
DENSE_LIMIT = 200


class LPStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class LinearProgram:
    """``min c'z  s.t.  A z = b,  lb <= z <= ub`` (bounds may be infinite)."""

    c: np.ndarray
    A: object
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    names: Optional[Sequence[str]] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        p = self.c.size
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (p,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (p,)).copy()
        if not sp.issparse(self.A):
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float)).reshape(self.b.size, p)
        if self.A.shape != (self.b.size, p):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.b.size, p)}")
        if np.any(self.lb > self.ub):
            raise ValueError("lb must not exceed ub")
        if self.names is not None and len(self.names) != p:
            raise ValueError("names must label every variable")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def dense_A(self) -> np.ndarray:
        return self.A.toarray() if sp.issparse(self.A) else self.A


@dataclass
class LPResult:
    status: LPStatus
    z: np.ndarray
    objective_value: float
    y: np.ndarray
    reduced_costs: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is LPStatus.OPTIMAL


def certificate(lp: LinearProgram, z, y, d) -> dict:
    """Primal feasibility, dual feasibility, complementary slackness and duality gap."""
    A = lp.A
    resid = np.abs(A @ z - lp.b)
    row_scale = np.maximum(np.maximum(1.0, np.abs(lp.b)), abs(A) @ np.abs(z))
    bound_viol = max(float(np.max(lp.lb - z, initial=0.0)), float(np.max(z - lp.ub, initial=0.0)))
    primal = max(float(np.max(resid, initial=0.0)), bound_viol)
    fin_lb, fin_ub = np.isfinite(lp.lb), np.isfinite(lp.ub)
    dual_viol = np.where(~fin_lb, np.maximum(d, 0.0), 0.0) + np.where(~fin_ub, np.maximum(-d, 0.0), 0.0)
    dpos, dneg = np.maximum(d, 0.0), np.maximum(-d, 0.0)
    slack_lo = np.where(fin_lb, z - np.where(fin_lb, lp.lb, 0.0), 0.0)
    slack_hi = np.where(fin_ub, np.where(fin_ub, lp.ub, 0.0) - z, 0.0)
    comp = float(np.max(np.abs(dpos * slack_lo) + np.abs(dneg * slack_hi), initial=0.0))
    primal_obj = float(lp.c @ z)
    dual_obj = float(
        lp.b @ y + np.sum(np.where(fin_lb, lp.lb, 0.0) * dpos) - np.sum(np.where(fin_ub, lp.ub, 0.0) * dneg)
    )
    return {
        "primal_infeasibility": primal,
        "relative_primal_infeasibility": max(float(np.max(resid / row_scale, initial=0.0)), bound_viol),
        "dual_infeasibility": float(np.max(dual_viol, initial=0.0)),
        "complementary_slackness": comp,
        "duality_gap": abs(primal_obj - dual_obj),
        "relative_duality_gap": abs(primal_obj - dual_obj) / (1.0 + abs(primal_obj)),
    }


def _solve_dense(lp: LinearProgram) -> LPResult:
    out = simplex.revised_simplex(lp.c, lp.dense_A(), lp.b, lp.lb, lp.ub)
    status = {
        simplex.OPTIMAL: LPStatus.OPTIMAL,
        simplex.INFEASIBLE: LPStatus.INFEASIBLE,
        simplex.UNBOUNDED: LPStatus.UNBOUNDED,
        simplex.ITERATION_LIMIT: LPStatus.NUMERICAL_FAILURE,
    }[out.status]
    diag = {"method": "revised-simplex", "iterations": out.iterations}
    return LPResult(status, out.z, float(lp.c @ out.z), out.y, out.reduced_costs, diag)


def _solve_highs(lp: LinearProgram, algorithm: str = "highs-ds") -> LPResult:
    bounds = np.column_stack([lp.lb, lp.ub])
    A = sp.csr_matrix(lp.A) if lp.b.size else None
    res = linprog(
        lp.c,
        A_eq=A,
        b_eq=lp.b if lp.b.size else None,
        bounds=bounds,
        method=algorithm,
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10, "presolve": True},
    )
    status = {0: LPStatus.OPTIMAL, 2: LPStatus.INFEASIBLE, 3: LPStatus.UNBOUNDED}.get(
        res.status, LPStatus.NUMERICAL_FAILURE
    )
    p, r = lp.c.size, lp.b.size
    diag = {"method": algorithm, "iterations": int(getattr(res, "nit", 0) or 0), "message": res.message}
    if status is not LPStatus.OPTIMAL or res.x is None:
        z = res.x if res.x is not None else np.full(p, np.nan)
        return LPResult(status, z, float("nan"), np.zeros(r), np.zeros(p), diag)
    y = np.asarray(res.eqlin.marginals) if r else np.zeros(0)
    d = np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    return LPResult(status, np.asarray(res.x), float(res.fun), y, d, diag)


def solve_lp(lp: LinearProgram, method: str = "auto") -> LPResult:
    """Solve ``lp``.

    ``method`` is ``"simplex"`` (in-repo dense simplex), ``"highs"`` (HiGHS dual
    simplex), ``"highs-ipm"`` (HiGHS interior point with crossover to a vertex)
    or ``"auto"``, which picks by size.
    """
    if method == "auto":
        rows, cols = lp.shape
        method = "simplex" if rows + cols <= DENSE_LIMIT else "highs"
    if method == "simplex":
        result = _solve_dense(lp)
    elif method == "highs":
        result = _solve_highs(lp)
    elif method == "highs-ipm":
        result = _solve_highs(lp, "highs-ipm")
    else:
        raise ValueError(f"unknown LP method {method!r}")
    if result.optimal:
        cert = certificate(lp, result.z, result.y, result.reduced_costs)
        result.diagnostics.update(cert)
        scale = 1.0 + abs(result.objective_value)
        result.diagnostics["contract_ok"] = (
            cert["primal_infeasibility"] <= CONTRACT_TOL * max(1.0, float(np.abs(lp.b).max(initial=0.0)))
            and cert["complementary_slackness"] <= CONTRACT_TOL * scale
            and cert["duality_gap"] <= CONTRACT_TOL * scale
        )
    return result


@dataclass(frozen=True)
class AffineBlock:
    """``q`` affine expressions ``sum_t vals[t] * z[cols[t]]  (row rows[t]) + const``."""

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    const: np.ndarray

    @property
    def size(self) -> int:
        return int(np.size(self.const))

    def evaluate(self, z) -> np.ndarray:
        out = np.array(self.const, dtype=float)
        np.add.at(out, self.rows, self.vals * np.asarray(z)[self.cols])
        return out


@dataclass(frozen=True)
class L1Group:
    plus: slice
    minus: slice
    rows: slice


class LPBuilder:
    """Accumulates variables and equality rows in COO form."""

    def __init__(self):
        self._c, self._lb, self._ub, self._names = [], [], [], []
        self._rows, self._cols, self._vals = [], [], []
        self._rhs = []
        self.nvars = 0
        self.nrows = 0
        self.families: dict[str, list[slice]] = {}

    def add_variables(self, count, lb=0.0, ub=np.inf, cost=0.0, family="x", names=None) -> slice:
        s = slice(self.nvars, self.nvars + count)
        self._c.append(np.broadcast_to(np.asarray(cost, dtype=float), (count,)))
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=float), (count,)))
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=float), (count,)))
        self._names.extend(names if names is not None else [f"{family}[{k}]" for k in range(count)])
        self.families.setdefault(family, []).append(s)
        self.nvars += count
        return s

    def add_rows(self, rows, cols, vals, rhs) -> slice:
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        s = slice(self.nrows, self.nrows + rhs.size)
        self._rows.append(np.asarray(rows, dtype=np.int64) + self.nrows)
        self._cols.append(np.asarray(cols, dtype=np.int64))
        self._vals.append(np.asarray(vals, dtype=float))
        self._rhs.append(rhs)
        self.nrows += rhs.size
        return s

    def add_entries(self, rows, cols, vals) -> None:
        """Add coefficients to rows that already exist."""
        self._rows.append(np.asarray(rows, dtype=np.int64))
        self._cols.append(np.asarray(cols, dtype=np.int64))
        self._vals.append(np.asarray(vals, dtype=float))

    def family_size(self, family: str) -> int:
        return sum(s.stop - s.start for s in self.families.get(family, []))

    def build(self) -> LinearProgram:
        cat = lambda parts, dt=float: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dtype=dt)
        A = sp.csr_matrix(
            (cat(self._vals), (cat(self._rows, np.int64), cat(self._cols, np.int64))),
            shape=(self.nrows, self.nvars),
        )
        return LinearProgram(cat(self._c), A, cat(self._rhs), cat(self._lb), cat(self._ub), list(self._names))


def linearize_l1_group(builder: LPBuilder, expr: AffineBlock, weight: float = 1.0, family: str = "l1") -> L1Group:
    """Add ``e+ - e- = expr`` with ``e+, e- >= 0`` and ``weight * sum(e+ + e-)`` to the objective."""
    q = expr.size
    plus = builder.add_variables(q, 0.0, np.inf, weight, family=family)
    minus = builder.add_variables(q, 0.0, np.inf, weight, family=family)
    k = np.arange(q)
    rows = np.concatenate([expr.rows, k, k])
    cols = np.concatenate([expr.cols, plus.start + k, minus.start + k])
    vals = np.concatenate([expr.vals, -np.ones(q), np.ones(q)])
    rs = builder.add_rows(rows, cols, vals, -np.asarray(expr.const, dtype=float))
    return L1Group(plus, minus, rs)


def write_mps(lp: LinearProgram, path, name: str = "LP") -> None:
    """Fixed-format MPS with generated 8-character names."""
    A = sp.csc_matrix(lp.A)
    r, p = A.shape
    rn = [f"R{k:07d}" for k in range(r)]
    cn = [f"C{k:07d}" for k in range(p)]
    fmt = lambda x: f"{x:12.6g}" if abs(x) >= 1e-4 or x == 0 else f"{x:12.5e}"
    lines = [f"NAME          {name[:8]}", "ROWS", " N  COST"]
    lines += [f" E  {n}" for n in rn]
    lines.append("COLUMNS")
    for j in range(p):
        if lp.c[j] != 0:
            lines.append(f"    {cn[j]:<8}  {'COST':<8}  {fmt(lp.c[j])}")
        for idx in range(A.indptr[j], A.indptr[j + 1]):
            lines.append(f"    {cn[j]:<8}  {rn[A.indices[idx]]:<8}  {fmt(A.data[idx])}")
    lines.append("RHS")
    for i in range(r):
        if lp.b[i] != 0:
            lines.append(f"    {'RHS':<8}  {rn[i]:<8}  {fmt(lp.b[i])}")
    lines.append("BOUNDS")
    for j in range(p):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == hi:
            lines.append(f" FX {'BND':<8}  {cn[j]:<8}  {fmt(lo)}")
            continue
        if np.isinf(lo) and np.isinf(hi):
            lines.append(f" FR {'BND':<8}  {cn[j]:<8}")
            continue
        if np.isinf(lo):
            lines.append(f" MI {'BND':<8}  {cn[j]:<8}")
        elif lo != 0:
            lines.append(f" LO {'BND':<8}  {cn[j]:<8}  {fmt(lo)}")
        if np.isfinite(hi):
            lines.append(f" UP {'BND':<8}  {cn[j]:<8}  {fmt(hi)}")
    lines.append("ENDATA")
    Path(path).write_text("\n".join(lines) + "\n")
