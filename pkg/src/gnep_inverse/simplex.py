"""Dense revised simplex for ``min c'z  s.t.  A z = b,  lb <= z <= ub``.

Two phases with one artificial per row, bounded variables handled directly
(nonbasic variables sit at a finite bound, or at zero when free), and Bland's
smallest-index rule for both the entering and the leaving choice so that the
method terminates on degenerate problems and is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class SimplexOutcome:
    status: str
    z: np.ndarray
    y: np.ndarray
    reduced_costs: np.ndarray
    iterations: int
    basis: np.ndarray


class _Tableau:
    def __init__(self, A, b, lb, ub, z, basis, tol, pivot_tol):
        self.A, self.b, self.lb, self.ub = A, b, lb, ub
        self.z = z
        self.basis = basis
        self.tol = tol
        self.pivot_tol = pivot_tol
        self.nonbasic = np.ones(A.shape[1], dtype=bool)
        self.nonbasic[basis] = False

    def _refresh(self):
        B = self.A[:, self.basis]
        self.lu = sla.lu_factor(B, check_finite=False)
        zn = np.where(self.nonbasic, self.z, 0.0)
        self.z[self.basis] = sla.lu_solve(self.lu, self.b - self.A @ zn, check_finite=False)

    def duals(self, c):
        return sla.lu_solve(self.lu, c[self.basis], trans=1, check_finite=False)

    def run(self, c, max_iter):
        it = 0
        span = self.ub - self.lb
        while True:
            self._refresh()
            y = self.duals(c)
            d = c - self.A.T @ y
            at_lb = self.nonbasic & (span > 0) & np.isclose(self.z, self.lb, rtol=0, atol=self.tol) & (d < -self.tol)
            at_ub = self.nonbasic & (span > 0) & np.isclose(self.z, self.ub, rtol=0, atol=self.tol) & (d > self.tol)
            free = (
                self.nonbasic
                & ~np.isclose(self.z, self.lb, rtol=0, atol=self.tol)
                & ~np.isclose(self.z, self.ub, rtol=0, atol=self.tol)
                & (np.abs(d) > self.tol)
            )
            eligible = np.flatnonzero(at_lb | at_ub | free)
            if eligible.size == 0:
                return OPTIMAL, it, y, d
            if it >= max_iter:
                return ITERATION_LIMIT, it, y, d
            j = int(eligible[0])
            direction = -1.0 if d[j] > 0 else 1.0

            w = -direction * sla.lu_solve(self.lu, self.A[:, j], check_finite=False)
            zb = self.z[self.basis]
            lbb, ubb = self.lb[self.basis], self.ub[self.basis]
            step = np.full(len(self.basis), np.inf)
            dec = w < -self.pivot_tol
            inc = w > self.pivot_tol
            with np.errstate(divide="ignore", invalid="ignore"):
                step[dec] = (zb[dec] - lbb[dec]) / -w[dec]
                step[inc] = (ubb[inc] - zb[inc]) / w[inc]
            step = np.maximum(step, 0.0)
            t_flip = span[j]
            t_basic = step.min() if step.size else np.inf
            t = min(t_flip, t_basic)
            if not np.isfinite(t):
                return UNBOUNDED, it, y, d

            self.z[j] += direction * t
            self.z[self.basis] = zb + t * w
            if t_flip <= t_basic:
                # bound flip, basis unchanged
                self.z[j] = self.ub[j] if direction > 0 else self.lb[j]
            else:
                ties = np.flatnonzero(step <= t_basic + self.tol * max(1.0, t_basic))
                leave_pos = ties[np.argmin(self.basis[ties])]
                leaving = self.basis[leave_pos]
                self.z[leaving] = self.lb[leaving] if w[leave_pos] < 0 else self.ub[leaving]
                self.basis[leave_pos] = j
                self.nonbasic[j] = False
                self.nonbasic[leaving] = True
            it += 1


def revised_simplex(c, A, b, lb, ub, tol=1e-9, pivot_tol=1e-9, max_iter=50000) -> SimplexOutcome:
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    r, p = A.shape

    z0 = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
    resid = b - A @ z0
    sign = np.where(resid >= 0, 1.0, -1.0)
    Af = np.hstack([A, np.diag(sign)])
    lbf = np.concatenate([lb, np.zeros(r)])
    ubf = np.concatenate([ub, np.full(r, np.inf)])
    zf = np.concatenate([z0, np.abs(resid)])
    basis = np.arange(p, p + r)

    tab = _Tableau(Af, b, lbf, ubf, zf, basis, tol, pivot_tol)
    phase1_cost = np.concatenate([np.zeros(p), np.ones(r)])
    status, it1, _, _ = tab.run(phase1_cost, max_iter)
    infeas = tab.z[p:].sum()
    if status == ITERATION_LIMIT or infeas > tol * max(1.0, np.abs(b).max(initial=0.0)) * 10:
        st = ITERATION_LIMIT if status == ITERATION_LIMIT else INFEASIBLE
        return SimplexOutcome(st, tab.z[:p].copy(), np.zeros(r), np.zeros(p), it1, tab.basis.copy())

    # artificials are pinned at zero for phase two
    tab.ub[p:] = 0.0
    tab.z[p:] = np.where(tab.nonbasic[p:], 0.0, tab.z[p:])
    cost = np.concatenate([c, np.zeros(r)])
    status, it2, y, d = tab.run(cost, max_iter - it1)
    return SimplexOutcome(status, tab.z[:p].copy(), y, d[:p], it1 + it2, tab.basis.copy())
