"""GOSPA mapping error and UE state RMSE.

GOSPA follows the optimal-subpattern-assignment form: the best assignment of
estimated to true points under the cutoff-saturated distance, plus a
cutoff^p / alpha penalty for each missed and false point; the reported parts
are p-th roots of the three contributions so that
total^p = localization^p + missed^p + false^p holds exactly.
"""

import math
from dataclasses import dataclass

import numpy as np

from .assignment import solve_min_cost
from .geometry import wrap_angle


@dataclass(frozen=True)
class GospaParams:
    cutoff: float = 20.0
    order: float = 2.0
    alpha: float = 2.0

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if self.order < 1:
            raise ValueError("order must be at least 1")
        if not (0 < self.alpha <= 2):
            raise ValueError("alpha must be in (0, 2]")


@dataclass(frozen=True)
class GospaResult:
    total: float
    localization: float
    missed: float
    false: float
    n_matched: int
    n_missed: int
    n_false: int

    def decomposition_gap(self, order: float) -> float:
        return abs(
            self.total**order
            - (self.localization**order + self.missed**order + self.false**order)
        )


def gospa(est, truth, params: GospaParams = GospaParams(), est_kinds=None, truth_kinds=None):
    """GOSPA distance between point sets (n, d) and (m, d).

    Optional kind tags mark pairs of unlike kind as unmatchable.  Pairs
    assigned at saturated distance count as missed + false, which is
    cost-equivalent for alpha = 2.
    """
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    est = est.reshape(0, 3) if est.size == 0 else np.atleast_2d(est)
    truth = truth.reshape(0, 3) if truth.size == 0 else np.atleast_2d(truth)
    n, m = len(est), len(truth)
    c, p, alpha = params.cutoff, params.order, params.alpha
    miss_cost = c**p / alpha

    loc_p = 0.0
    n_matched = 0
    if n and m:
        d = np.linalg.norm(est[:, None, :] - truth[None, :, :], axis=-1)
        if est_kinds is not None or truth_kinds is not None:
            ek = np.asarray(est_kinds).reshape(n, 1)
            tk = np.asarray(truth_kinds).reshape(1, m)
            d = np.where(ek == tk, d, np.inf)
        cost = np.minimum(d, c) ** p
        rows, cols = (np.arange(n), np.array(solve_min_cost(cost).row_to_col)) if n <= m else (
            np.array(solve_min_cost(cost.T).row_to_col), np.arange(m))
        matched = d[rows, cols] < c
        loc_p = float(cost[rows[matched], cols[matched]].sum())
        n_matched = int(matched.sum())

    n_missed = m - n_matched
    n_false = n - n_matched
    miss_p = miss_cost * n_missed
    false_p = miss_cost * n_false
    total = (loc_p + miss_p + false_p) ** (1.0 / p)
    return GospaResult(
        float(total),
        loc_p ** (1.0 / p),
        miss_p ** (1.0 / p),
        false_p ** (1.0 / p),
        n_matched,
        n_missed,
        n_false,
    )


def gospa_for_kind(est_landmarks, truth_landmarks, kind, params: GospaParams = GospaParams()):
    """GOSPA restricted to landmarks of one kind (est side may carry weights)."""
    pts_e = [lm.position for lm, _ in est_landmarks if lm.kind == kind]
    pts_t = [lm.position for lm in truth_landmarks if lm.kind == kind]
    e = np.array(pts_e).reshape(len(pts_e), 3)
    t = np.array(pts_t).reshape(len(pts_t), 3)
    return gospa(e, t, params)


_RMSE_FIELDS = {"x": 0, "y": 1, "heading": 2, "clock_bias": 3}


def rmse(est_states, true_states, field: str) -> float:
    """Root-mean-square error over steps for one state field or 'position'.

    Heading errors are wrapped into (-pi, pi] before squaring.
    """
    if len(est_states) != len(true_states):
        raise ValueError("state sequences must have equal length")
    est = np.array([s.as_array() for s in est_states])
    true = np.array([s.as_array() for s in true_states])
    if field == "position":
        sq = ((est[:, :2] - true[:, :2]) ** 2).sum(axis=1)
    elif field in _RMSE_FIELDS:
        i = _RMSE_FIELDS[field]
        diff = est[:, i] - true[:, i]
        if field == "heading":
            diff = wrap_angle(diff)
        sq = diff**2
    else:
        raise ValueError(f"unknown field {field!r}")
    return float(math.sqrt(sq.mean()))
