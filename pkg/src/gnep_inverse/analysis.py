"""Flow-error metrics, spectral monotonicity diagnostics and boxplot statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .game import CostMode, CostParameterization, interaction_matrix

__all__ = [
    "flow_error",
    "normalized_flow_error",
    "SpectralReport",
    "spectral_check",
    "per_arc_symmetric_blocks",
    "all_c_block_matrix",
    "TrialSummary",
    "summarize_trials",
    "write_summary_csv",
]


def _pair(original, recovered):
    a = np.asarray(original, dtype=float)
    b = np.asarray(recovered, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"flow tensors differ in shape: {a.shape} vs {b.shape}")
    return a, b


def flow_error(original, recovered) -> float:
    """Frobenius norm of the difference of two (K, N, n) flow tensors."""
    a, b = _pair(original, recovered)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def normalized_flow_error(original, recovered) -> float:
    a, b = _pair(original, recovered)
    if a.size == 0:
        raise ValueError("empty flow tensor")
    return flow_error(a, b) / a.size


@dataclass(frozen=True)
class SpectralReport:
    min_eig_symmetric_part: float
    is_positive_definite: bool
    modulus_lower_bound: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "min_eig_symmetric_part": self.min_eig_symmetric_part,
            "is_positive_definite": self.is_positive_definite,
            "modulus_lower_bound": self.modulus_lower_bound,
        }


def per_arc_symmetric_blocks(params: CostParameterization, players: int) -> np.ndarray:
    """The ``n`` independent ``N x N`` pieces of the symmetric part of M.

    On arc ``a`` the restriction of M is ``c_a 1' + diag(c_a)`` with ``c_a`` the
    player column, so its symmetric part is ``diag(c_a) + (c_a 1' + 1 c_a')/2``.
    """
    params = params.for_players(players)
    c = params.c_int.T  # (n, N)
    ones = np.ones(players)
    outer = c[:, :, None] * ones[None, None, :]
    return 0.5 * (outer + outer.transpose(0, 2, 1)) + c[:, :, None] * np.eye(players)[None]


def spectral_check(params: CostParameterization, players: int, dense: bool = False) -> SpectralReport:
    """Minimum eigenvalue of the symmetric part of the interaction matrix."""
    if dense:
        M = interaction_matrix(params, players)
        lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    else:
        lam = float(np.linalg.eigvalsh(per_arc_symmetric_blocks(params, players))[:, 0].min())
    bound = float(params.c_int[0].min()) if params.mode is CostMode.SHARED else None
    return SpectralReport(lam, lam > 0, bound)


def all_c_block_matrix(c, players: int) -> np.ndarray:
    """``nN x nN`` matrix whose every block is ``diag(c)``."""
    return np.kron(np.ones((players, players)), np.diag(np.asarray(c, dtype=float)))


@dataclass(frozen=True)
class TrialSummary:
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple

    def to_dict(self) -> dict:
        return {
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "outliers": list(self.outliers),
        }


def summarize_trials(values: Iterable[float]) -> TrialSummary:
    vals = np.sort(np.asarray(list(values), dtype=float))
    if vals.size == 0:
        raise ValueError("cannot summarize an empty list")
    q1, med, q3 = np.percentile(vals, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = tuple(float(v) for v in vals if v < lo or v > hi)
    return TrialSummary(float(q1), float(med), float(q3), float(lo), float(hi), outliers)


SUMMARY_HEADER = ("metric", "group", "q1", "median", "q3", "whisker_low", "whisker_high", "outliers")


def write_summary_csv(path, rows: Sequence[tuple]) -> None:
    """``rows`` holds ``(metric, group_label, TrialSummary)`` triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for metric, group, s in rows:
            w.writerow([metric, group, repr(s.q1), repr(s.median), repr(s.q3), repr(s.whisker_low),
                        repr(s.whisker_high), ";".join(repr(v) for v in s.outliers)])
