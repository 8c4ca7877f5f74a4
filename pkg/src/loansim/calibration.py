"""Data-driven choice of the initial batch size n0.

Accuracy is measured on one shared held-out set while the training sample
grows along the schedule {k, 2k, ..., last multiple of k, pool size}; n0
is the smallest size whose trailing trend-line slope has flattened out.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, split
from .evaluation import accuracy, apply_threshold, confusion, format_number
from .learners import EnsembleParams, fit, predict_proba
from .seeding import derive_seed


class CalibrationError(ValueError):
    pass


@dataclass
class LearningCurve:
    sizes: list[int]
    accuracy_mean: list[float]
    accuracy_std: list[float]
    protocol: str

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise CalibrationError("curve sizes must be strictly increasing")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracy_mean):
            raise CalibrationError("accuracies must be in [0, 1]")

    @property
    def points(self) -> list[tuple[int, float]]:
        return list(zip(self.sizes, self.accuracy_mean))


@dataclass(frozen=True)
class N0Result:
    n0: int
    stabilized: bool
    slope: float  # trailing-window slope at the selected size, per 1,000 rows


def size_schedule(pool_size: int, k: int) -> list[int]:
    """{k, 2k, ..., floor(pool/k)*k} plus the full pool size."""
    if k < 1 or k > pool_size:
        raise CalibrationError(f"step size k={k} leaves an empty schedule "
                               f"for a pool of {pool_size}")
    sizes = list(range(k, (pool_size // k) * k + 1, k))
    if sizes[-1] != pool_size:
        sizes.append(pool_size)
    return sizes


def learning_curve(U: Dataset, learner: EnsembleParams, k: int,
                   eval_fraction: float = 0.2, seed: int = 0,
                   repeats: int = 3, tau: float = 0.5) -> LearningCurve:
    """Held-out accuracy as a function of the training-sample size.

    One evaluation split is carved out first and shared by every point,
    so curve noise reflects training-set variation only. Each point
    averages ``repeats`` seeded draws.
    """
    if not 0.0 < eval_fraction < 1.0:
        raise CalibrationError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    if k >= U.n_rows:
        raise CalibrationError(f"step size k={k} must be below |U|={U.n_rows}")
    if repeats < 1:
        raise CalibrationError("repeats must be >= 1")
    pool, holdout = split(U, 1.0 - eval_fraction, derive_seed(seed, "eval-split"))
    sizes = size_schedule(pool.n_rows, k)

    means: list[float] = []
    stds: list[float] = []
    for s in sizes:
        accs = []
        for r in range(repeats):
            rng = np.random.default_rng(derive_seed(seed, "sample", s, r))
            rows = np.sort(rng.choice(pool.n_rows, size=s, replace=False))
            params = replace(learner, seed=derive_seed(seed, "fit", s, r))
            model = fit(params, pool.subset(rows, note=f"curve(s={s}, rep={r})"))
            scores = predict_proba(model, holdout.X)
            accs.append(accuracy(confusion(apply_threshold(scores, tau),
                                           holdout.y)))
        means.append(float(np.mean(accs)))
        stds.append(float(np.std(accs)))
    protocol = (f"shared holdout of {holdout.n_rows} rows "
                f"(eval_fraction={eval_fraction}), {repeats} repeats per size, "
                f"decision threshold {tau}")
    return LearningCurve(sizes=sizes, accuracy_mean=means, accuracy_std=stds,
                         protocol=protocol)


def trailing_slope(curve: LearningCurve, end_index: int, window: int) -> float:
    """Least-squares slope, in accuracy per 1,000 rows, over the window of
    points ending at ``end_index``."""
    if window < 2:
        raise CalibrationError("window must be >= 2")
    if end_index + 1 < window:
        raise CalibrationError("not enough points before end_index")
    xs = np.array(curve.sizes[end_index + 1 - window:end_index + 1],
                  dtype=np.float64) / 1000.0
    ys = np.array(curve.accuracy_mean[end_index + 1 - window:end_index + 1])
    xc = xs - xs.mean()
    denom = float((xc * xc).sum())
    if denom == 0.0:
        raise CalibrationError("degenerate window: all sizes equal")
    return float((xc * (ys - ys.mean())).sum() / denom)


def detect_n0(curve: LearningCurve, window: int = 5,
              slope_eps: float = 0.002) -> N0Result:
    """Smallest schedule size whose trailing-window trend line is flat.

    Flat means |slope| <= slope_eps (accuracy per 1,000 rows). When no
    window qualifies the final size is returned with stabilized=False.
    """
    if window < 2:
        raise CalibrationError("window must be >= 2")
    if len(curve.sizes) < window:
        raise CalibrationError(f"curve has {len(curve.sizes)} points, "
                               f"window needs {window}")
    slope = 0.0
    for i in range(window - 1, len(curve.sizes)):
        slope = trailing_slope(curve, i, window)
        if abs(slope) <= slope_eps:
            return N0Result(n0=curve.sizes[i], stabilized=True, slope=slope)
    return N0Result(n0=curve.sizes[-1], stabilized=False, slope=slope)


def curve_to_csv(curve: LearningCurve, window: int = 5) -> str:
    """Curve export: size, accuracy_mean, accuracy_std, trailing_slope."""
    out = io.StringIO()
    out.write("size,accuracy_mean,accuracy_std,trailing_slope\n")
    for i, size in enumerate(curve.sizes):
        slope = ""
        if i + 1 >= window:
            slope = format_number(trailing_slope(curve, i, window))
        out.write(f"{size},{format_number(curve.accuracy_mean[i])},"
                  f"{format_number(curve.accuracy_std[i])},{slope}\n")
    return out.getvalue()
