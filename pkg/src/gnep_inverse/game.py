"""The N-player routing game with a joint arc-capacity constraint.

Player ``i`` routes one unit from the OD origin to the destination and pays

    x_i' C_i (x_1 + ... + x_N) + cbar_i' x_i

subject to ``D x_i = f``, ``x_i >= 0`` and ``sum_j x_j <= alpha``. ``C_i`` is
diagonal, so parameters are stored as arrays of shape ``(N, n)``. The stacked
pseudo-gradient has block ``i`` equal to ``C_i (2 x_i + sum_{j != i} x_j) + cbar_i``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .network import Network, ODPair, demand_vector, incidence_matrix

__all__ = [
    "CostMode",
    "CostParameterization",
    "GameInstance",
    "EquilibriumSolution",
    "KKTResidualReport",
    "eval_F",
    "interaction_matrix",
    "potential_value",
    "potential_gradient",
    "kkt_residuals",
    "recover_nonneg_duals",
]


class CostMode(str, enum.Enum):
    SHARED = "shared"
    PER_PLAYER = "per-player"

    @classmethod
    def parse(cls, value) -> "CostMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"sharedacrossplayers": "shared", "perplayer": "per-player", "same": "shared", "different": "per-player"}
        key = aliases.get(key.replace("-", ""), key)
        return cls(key)


@dataclass(frozen=True)
class CostParameterization:
    """Diagonals of the interaction matrices and base-cost vectors, one row per player."""

    mode: CostMode
    c_int: np.ndarray
    c_base: np.ndarray

    def __post_init__(self):
        mode = CostMode.parse(self.mode)
        c_int = np.atleast_2d(np.array(self.c_int, dtype=float))
        c_base = np.atleast_2d(np.array(self.c_base, dtype=float))
        if c_int.shape != c_base.shape:
            raise ValueError(f"c_int shape {c_int.shape} != c_base shape {c_base.shape}")
        if not (np.all(c_int > 0) and np.all(c_base > 0)):
            raise ValueError("cost entries must be strictly positive")
        if mode is CostMode.SHARED and c_int.shape[0] > 1:
            if np.any(c_int != c_int[0]) or np.any(c_base != c_base[0]):
                raise ValueError("shared mode requires identical rows for every player")
        c_int.setflags(write=False)
        c_base.setflags(write=False)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "c_int", c_int)
        object.__setattr__(self, "c_base", c_base)

    @classmethod
    def shared(cls, c_int, c_base, players: int) -> "CostParameterization":
        c_int = np.asarray(c_int, dtype=float).ravel()
        c_base = np.asarray(c_base, dtype=float).ravel()
        return cls(CostMode.SHARED, np.tile(c_int, (players, 1)), np.tile(c_base, (players, 1)))

    @classmethod
    def per_player(cls, c_int, c_base) -> "CostParameterization":
        return cls(CostMode.PER_PLAYER, c_int, c_base)

    @property
    def player_count(self) -> int:
        return self.c_int.shape[0]

    @property
    def arc_count(self) -> int:
        return self.c_int.shape[1]

    def scaled(self, theta: float) -> "CostParameterization":
        return CostParameterization(self.mode, theta * self.c_int, theta * self.c_base)

    def for_players(self, players: int) -> "CostParameterization":
        """Broadcast a shared parameterization to ``players`` rows."""
        if self.player_count == players:
            return self
        if self.mode is not CostMode.SHARED:
            raise ValueError(f"per-player parameters cover {self.player_count} players, not {players}")
        return CostParameterization.shared(self.c_int[0], self.c_base[0], players)

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "c_int": self.c_int.tolist(), "c_base": self.c_base.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "CostParameterization":
        return cls(CostMode.parse(doc["mode"]), doc["c_int"], doc["c_base"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "CostParameterization":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GameInstance:
    network: Network
    player_count: int
    capacity: np.ndarray
    od: ODPair
    D: np.ndarray = field(init=False, repr=False, compare=False)
    f: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.player_count < 1:
            raise ValueError("player_count must be >= 1")
        cap = np.array(self.capacity, dtype=float)
        if cap.ndim == 0:
            cap = np.full(self.network.arc_count, float(cap))
        if cap.shape != (self.network.arc_count,):
            raise ValueError(f"capacity must have length {self.network.arc_count}")
        if not np.all(cap > 0):
            raise ValueError("capacity must be strictly positive")
        cap.setflags(write=False)
        object.__setattr__(self, "capacity", cap)
        object.__setattr__(self, "od", ODPair(*self.od))
        object.__setattr__(self, "D", incidence_matrix(self.network).astype(float))
        object.__setattr__(self, "f", demand_vector(self.network, self.od))

    @property
    def n(self) -> int:
        return self.network.arc_count

    @property
    def m(self) -> int:
        return self.network.node_count

    def with_od(self, od) -> "GameInstance":
        return GameInstance(self.network, self.player_count, self.capacity, od)


@dataclass
class EquilibriumSolution:
    """Flows ``x`` and duals ``v``, ``u`` (per player, row-wise) and ``ubar`` (shared)."""

    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    ubar: np.ndarray
    kkt_residual: float = float("nan")
    converged: bool = True
    start_point: Optional[str] = None
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class KKTResidualReport:
    stationarity_inf_norm: float
    complementarity_nonneg_inf_norm: float
    complementarity_capacity_inf_norm: float
    primal_equality_inf_norm: float
    primal_bound_violation: float

    @property
    def max(self) -> float:
        return max(
            self.stationarity_inf_norm,
            self.complementarity_nonneg_inf_norm,
            self.complementarity_capacity_inf_norm,
            self.primal_equality_inf_norm,
            self.primal_bound_violation,
        )


def _blocks(x, players: int, n: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size % players:
            raise ValueError(f"stacked length {x.size} is not a multiple of N={players}")
        x = x.reshape(players, -1)
    if x.shape[0] != players or (n is not None and x.shape[1] != n):
        raise ValueError(f"flow shape {x.shape} does not match N={players}, n={n}")
    return x


def eval_F(params: CostParameterization, x, players: int) -> np.ndarray:
    """Stacked pseudo-gradient; output has the same shape as ``x``."""
    params = params.for_players(players)
    X = _blocks(x, players, params.arc_count)
    total = X.sum(axis=0)
    out = params.c_int * (X + total) + params.c_base
    return out.reshape(np.shape(x))


def interaction_matrix(params: CostParameterization, players: int) -> np.ndarray:
    """Dense ``nN x nN`` matrix with ``2 C_i`` on the diagonal blocks and ``C_i`` off it."""
    params = params.for_players(players)
    n = params.arc_count
    M = np.zeros((n * players, n * players))
    for i in range(players):
        Ci = np.diag(params.c_int[i])
        for j in range(players):
            M[i * n:(i + 1) * n, j * n:(j + 1) * n] = 2 * Ci if i == j else Ci
    return M


def _require_shared(params: CostParameterization):
    if params.mode is not CostMode.SHARED:
        raise ValueError("the exact potential exists only when all players share costs")


def potential_value(params: CostParameterization, x, players: int) -> float:
    _require_shared(params)
    c, cb = params.c_int[0], params.c_base[0]
    X = _blocks(x, players, params.arc_count)
    total = X.sum(axis=0)
    # sum_i x_i'C x_i + 1/2 sum_{i != j} x_i'C x_j = 1/2 (sum_i x_i'C x_i + S'C S)
    return float(0.5 * (np.sum(c * X * X) + total @ (c * total)) + cb @ total)


def potential_gradient(params: CostParameterization, x, players: int) -> np.ndarray:
    _require_shared(params)
    return eval_F(params, x, players)


def recover_nonneg_duals(instance: GameInstance, params: CostParameterization, x, v, ubar) -> np.ndarray:
    """Nonnegativity duals implied by exact stationarity."""
    N = instance.player_count
    X = _blocks(x, N, instance.n)
    V = _blocks(v, N, instance.m)
    return eval_F(params, X, N) + V @ instance.D + np.asarray(ubar, dtype=float)


def kkt_residuals(instance: GameInstance, params: CostParameterization, candidate: EquilibriumSolution) -> KKTResidualReport:
    N, n, m = instance.player_count, instance.n, instance.m
    X = _blocks(candidate.x, N, n)
    V = _blocks(candidate.v, N, m)
    U = _blocks(candidate.u, N, n)
    ub = np.asarray(candidate.ubar, dtype=float)
    if ub.shape != (n,):
        raise ValueError(f"ubar must have length {n}")
    stat = eval_F(params, X, N) + V @ instance.D - U + ub
    slack = instance.capacity - X.sum(axis=0)
    cons = X @ instance.D.T - instance.f
    neg = max(
        float(np.max(-X, initial=0.0)),
        float(np.max(-U, initial=0.0)),
        float(np.max(-ub, initial=0.0)),
        float(np.max(-slack, initial=0.0)),
    )
    return KKTResidualReport(
        stationarity_inf_norm=float(np.max(np.abs(stat))),
        complementarity_nonneg_inf_norm=float(np.max(np.abs(np.einsum("ij,ij->i", X, U)))),
        complementarity_capacity_inf_norm=float(abs(slack @ ub)),
        primal_equality_inf_norm=float(np.max(np.abs(cons))),
        primal_bound_violation=neg,
    )
