"""Thresholding, confusion accounting, metrics, social cost and grid sweeps.

The positive class is repay: a false positive is a wrongly granted loan
(benefited person), a false negative a wrongly denied one (harmed person).
Undefined precision/recall surface as None, never as 0, so time-series
consumers can render gaps.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

ORIGIN_FIXED = "fixed"
ORIGIN_ACCURACY = "accuracy_optimal"
ORIGIN_SOCIAL_COST = "social_cost_optimal"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class CostSpec:
    """Per-error costs; c_fp is fixed at 1 by convention."""

    c_fn: float
    c_fp: float = 1.0

    def __post_init__(self) -> None:
        if self.c_fn < 0 or self.c_fp < 0:
            raise EvaluationError("costs must be non-negative")


@dataclass(frozen=True)
class ThresholdPolicy:
    """A cutoff with its origin. tau is None until the policy is resolved
    against data (possible for the two *_optimal origins)."""

    origin: str
    tau: float | None = None
    cost: float | None = None  # c for social_cost_optimal

    def __post_init__(self) -> None:
        if self.origin not in (ORIGIN_FIXED, ORIGIN_ACCURACY, ORIGIN_SOCIAL_COST):
            raise EvaluationError(f"unknown threshold origin {self.origin!r}")
        if self.origin == ORIGIN_FIXED and self.tau is None:
            raise EvaluationError("a fixed policy needs a tau")
        if self.origin == ORIGIN_SOCIAL_COST and self.cost is None:
            raise EvaluationError("a social-cost policy needs a cost c")
        if self.tau is not None and not 0.0 <= self.tau <= 1.0:
            raise EvaluationError(f"tau must be in [0, 1], got {self.tau}")

    @property
    def resolved(self) -> bool:
        return self.tau is not None

    def label(self) -> str:
        if self.origin == ORIGIN_ACCURACY:
            return "tau_acc"
        if self.origin == ORIGIN_SOCIAL_COST:
            return f"tau_sc_c{self.cost:g}"
        return f"tau_{self.tau:g}"


@dataclass
class SweepRow:
    index: int
    tau: float
    counts: ConfusionCounts
    accuracy: float
    precision: float | None
    recall: float | None
    social_cost: dict[float, float] = field(default_factory=dict)


def apply_threshold(scores: np.ndarray, tau: float) -> np.ndarray:
    """Predict 1 iff score >= tau."""
    if not 0.0 <= tau <= 1.0:
        raise EvaluationError(f"tau must be in [0, 1], got {tau}")
    return (np.asarray(scores) >= tau).astype(np.int64)


def confusion(yhat: np.ndarray, y: np.ndarray) -> ConfusionCounts:
    yhat = np.asarray(yhat)
    y = np.asarray(y)
    if yhat.shape != y.shape:
        raise EvaluationError(f"length mismatch: {yhat.shape} vs {y.shape}")
    pos = yhat == 1
    truth = y == 1
    tp = int(np.count_nonzero(pos & truth))
    fp = int(np.count_nonzero(pos & ~truth))
    fn = int(np.count_nonzero(~pos & truth))
    tn = int(np.count_nonzero(~pos & ~truth))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def accuracy(cc: ConfusionCounts) -> float:
    if cc.total == 0:
        raise EvaluationError("accuracy undefined on zero rows")
    return (cc.tp + cc.tn) / cc.total


def precision(cc: ConfusionCounts) -> float | None:
    """tp / (tp + fp); None when nothing was predicted positive."""
    if cc.tp + cc.fp == 0:
        return None
    return cc.tp / (cc.tp + cc.fp)


def recall(cc: ConfusionCounts) -> float | None:
    """tp / (tp + fn); None when there are no actual positives."""
    if cc.tp + cc.fn == 0:
        return None
    return cc.tp / (cc.tp + cc.fn)


def social_cost(cc: ConfusionCounts, cost: CostSpec) -> float:
    return cost.c_fn * cc.fn + cost.c_fp * cc.fp


def grid_taus(grid_step: float) -> np.ndarray:
    """The threshold grid {0, grid_step, ..., 1} as exact fractions i/num."""
    if not 0.0 < grid_step <= 1.0:
        raise EvaluationError(f"grid_step must be in (0, 1], got {grid_step}")
    num = int(round(1.0 / grid_step))
    if abs(num * grid_step - 1.0) > 1e-9:
        raise EvaluationError(f"grid_step {grid_step} does not evenly divide [0, 1]")
    return np.arange(num + 1) / num


def sweep(scores: np.ndarray, y: np.ndarray, grid_step: float,
          costs: list[float] | tuple[float, ...] = ()) -> list[SweepRow]:
    """One SweepRow per grid threshold.

    Sorts the scores once and reads each grid point's confusion cells off
    cumulative label counts, instead of re-thresholding per tau.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    if scores.shape != y.shape:
        raise EvaluationError("scores and labels must align")
    if scores.size == 0:
        raise EvaluationError("cannot sweep zero rows")
    taus = grid_taus(grid_step)

    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = y[order].astype(np.int64)
    total = scores.size
    total_pos = int(y_sorted.sum())
    # suffix_pos[k] = number of actual positives among scores[k:]
    suffix_pos = np.concatenate([np.cumsum(y_sorted[::-1])[::-1], [0]])

    first_ge = np.searchsorted(s_sorted, taus, side="left")
    rows: list[SweepRow] = []
    for i, tau in enumerate(taus):
        k = int(first_ge[i])
        tp = int(suffix_pos[k])
        fp = (total - k) - tp
        fn = total_pos - tp
        tn = k - fn
        cc = ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)
        sc = {float(c): social_cost(cc, CostSpec(c_fn=float(c))) for c in costs}
        rows.append(SweepRow(index=i, tau=float(tau), counts=cc,
                             accuracy=accuracy(cc), precision=precision(cc),
                             recall=recall(cc), social_cost=sc))
    return rows


def argmax_accuracy(rows: list[SweepRow]) -> ThresholdPolicy:
    """Grid threshold with maximal accuracy; ties go to the smallest tau."""
    if not rows:
        raise EvaluationError("empty sweep")
    best = rows[0]
    for row in rows[1:]:
        if row.accuracy > best.accuracy:
            best = row
    return ThresholdPolicy(origin=ORIGIN_ACCURACY, tau=best.tau)


def argmin_social_cost(rows: list[SweepRow], c: float) -> ThresholdPolicy:
    """Grid threshold with minimal social cost at c; ties go to the smallest tau."""
    if not rows:
        raise EvaluationError("empty sweep")
    c = float(c)
    if c not in rows[0].social_cost:
        raise EvaluationError(f"cost {c} was not part of the sweep")
    best = rows[0]
    for row in rows[1:]:
        if row.social_cost[c] < best.social_cost[c]:
            best = row
    return ThresholdPolicy(origin=ORIGIN_SOCIAL_COST, tau=best.tau, cost=c)


def relative_accuracy_loss(acc_best: float, acc_sc: float) -> float:
    """Accuracy increment of the accuracy-optimal over the socially optimal
    threshold, as a percentage of the latter."""
    if acc_sc <= 0:
        raise EvaluationError("relative loss undefined for non-positive accuracy")
    return (acc_best - acc_sc) / acc_sc * 100.0


def format_number(x: float | int | None) -> str:
    """CSV cell format: 6 significant digits, empty cell for undefined."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.6g}"


def sweep_to_csv(rows: list[SweepRow], costs: list[float]) -> str:
    """Plot-ready sweep table (the data behind the accuracy/cost curves)."""
    out = io.StringIO()
    cost_cols = [f"sc_c{c:g}" for c in costs]
    out.write(",".join(["tau", "tp", "fp", "tn", "fn", "accuracy", "precision",
                        "recall"] + cost_cols) + "\n")
    for row in rows:
        cells = [format_number(row.tau), str(row.counts.tp), str(row.counts.fp),
                 str(row.counts.tn), str(row.counts.fn),
                 format_number(row.accuracy), format_number(row.precision),
                 format_number(row.recall)]
        cells += [format_number(row.social_cost[float(c)]) for c in costs]
        out.write(",".join(cells) + "\n")
    return out.getvalue()
