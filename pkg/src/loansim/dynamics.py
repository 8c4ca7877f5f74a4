"""Paired Biased-vs-Oracle retraining simulation over a shared applicant stream.

Both runs start from the same initial client batch and the same model.
Each iteration draws one shared sample of fresh applicants; the biased
run admits (and later trains on) only applicants its current model
predicts as repaying, while the oracle run keeps everyone. Confusion
tallies accumulate admission-time predictions: the biased tally covers
the bank's observed clients, the oracle tally every sampled applicant.

Two consequences are exact by construction and exploited by the tests:
the biased run never adds false or true negatives after iteration 0, and
both runs consume identical sampled batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .evaluation import (ORIGIN_ACCURACY, ORIGIN_SOCIAL_COST, ConfusionCounts,
                         EvaluationError, ThresholdPolicy, accuracy,
                         apply_threshold, argmax_accuracy, argmin_social_cost,
                         confusion, format_number, precision, recall, sweep)
from .learners import EnsembleParams, TrainedModel, fit, predict_proba
from .seeding import derive_seed
from . import data as _data


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    n0: int
    n_prime: int
    iterations: int
    threshold: ThresholdPolicy
    learner: EnsembleParams
    seed: int
    refit_each_iteration: bool = True

    def __post_init__(self) -> None:
        if self.n0 < 1:
            raise SimulationError("n0 must be >= 1")
        if self.n_prime < 1:
            raise SimulationError("n_prime must be >= 1")
        if self.iterations < 1:
            raise SimulationError("iterations must be >= 1")


def default_n_prime(n0: int) -> int:
    return max(n0 // 10, 100)


@dataclass(frozen=True)
class MetricPoint:
    iteration: int
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float | None
    recall: float | None
    pct_fn: float
    pct_fp: float
    population: int


@dataclass
class MetricSeries:
    run: str  # "biased" | "oracle"
    points: list[MetricPoint] = field(default_factory=list)


@dataclass(frozen=True)
class ApplicantRecord:
    row_index: int
    iteration: int
    score: float
    yhat: int
    y: int
    admitted: bool


@dataclass
class PairedRunResult:
    config: SimulationConfig
    resolved_tau: float
    biased: MetricSeries
    oracle: MetricSeries
    biased_log: list[ApplicantRecord]
    oracle_log: list[ApplicantRecord]
    sampled_batches: list[np.ndarray]  # index batches, iteration 0 = C(0)
    truncated: bool
    completed_iterations: int
    metadata: dict[str, str] = field(default_factory=dict)


def draw_initial(U: Dataset, n0: int, seed: int) -> np.ndarray:
    """Uniform sample of n0 row indices without replacement, sorted."""
    if n0 > U.n_rows:
        raise SimulationError(f"n0={n0} exceeds the universe size {U.n_rows}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(U.n_rows, size=n0, replace=False))


def resolve_threshold(U: Dataset, c0: np.ndarray, policy: ThresholdPolicy,
                      learner: EnsembleParams, seed: int,
                      grid_step: float = 1e-4,
                      train_fraction: float = 0.8) -> ThresholdPolicy:
    """Resolve an *_optimal policy to a concrete tau.

    Fits on an 80/20 split of the initial batch and picks the grid
    optimum on the held-out side. Fixed or already-resolved policies
    pass through unchanged.
    """
    if policy.resolved:
        return policy
    c0ds = U.subset(c0, note="threshold-resolution")
    train, holdout = _data.split(c0ds, train_fraction,
                                 derive_seed(seed, "resolve", "split"))
    model = fit(replace(learner, seed=derive_seed(seed, "resolve", "fit")), train)
    scores = predict_proba(model, holdout.X)
    costs = [policy.cost] if policy.origin == ORIGIN_SOCIAL_COST else []
    rows = sweep(scores, holdout.y, grid_step, costs)
    if policy.origin == ORIGIN_ACCURACY:
        return argmax_accuracy(rows)
    return argmin_social_cost(rows, policy.cost)


def _point(iteration: int, cc: ConfusionCounts) -> MetricPoint:
    return MetricPoint(iteration=iteration, tp=cc.tp, fp=cc.fp, tn=cc.tn,
                       fn=cc.fn, accuracy=accuracy(cc), precision=precision(cc),
                       recall=recall(cc), pct_fn=cc.fn / cc.total,
                       pct_fp=cc.fp / cc.total, population=cc.total)


def _tally_add(tally: dict, cc: ConfusionCounts) -> None:
    tally["tp"] += cc.tp
    tally["fp"] += cc.fp
    tally["tn"] += cc.tn
    tally["fn"] += cc.fn


def _tally_counts(tally: dict) -> ConfusionCounts:
    return ConfusionCounts(**tally)


def run_paired(U: Dataset, cfg: SimulationConfig) -> PairedRunResult:
    """Run the client recurrence once for the biased and oracle variants.

    Requires a resolved threshold policy. If the applicant pool runs out
    before the requested number of iterations, the run truncates and the
    result carries an explicit flag.
    """
    if not cfg.threshold.resolved:
        raise SimulationError("threshold policy must be resolved to a tau "
                              "before simulation")
    tau = float(cfg.threshold.tau)
    n = U.n_rows
    if cfg.n0 > n:
        raise SimulationError(f"n0={cfg.n0} exceeds the universe size {n}")

    c0 = draw_initial(U, cfg.n0, derive_seed(cfg.seed, "sample", 0))
    sampled = np.zeros(n, dtype=bool)
    sampled[c0] = True

    params0 = replace(cfg.learner, seed=derive_seed(cfg.seed, "fit", 0))
    model0 = fit(params0, U.subset(c0, note="C(0)"))
    scores0 = predict_proba(model0, U.X[c0])
    yhat0 = apply_threshold(scores0, tau)
    cc0 = confusion(yhat0, U.y[c0])

    biased_tally = {"tp": cc0.tp, "fp": cc0.fp, "tn": cc0.tn, "fn": cc0.fn}
    oracle_tally = dict(biased_tally)
    biased = MetricSeries(run="biased", points=[_point(0, cc0)])
    oracle = MetricSeries(run="oracle", points=[_point(0, cc0)])

    biased_log: list[ApplicantRecord] = []
    oracle_log: list[ApplicantRecord] = []
    for t, row_idx in enumerate(c0):
        rec = ApplicantRecord(row_index=int(row_idx), iteration=0,
                              score=float(scores0[t]), yhat=int(yhat0[t]),
                              y=int(U.y[row_idx]), admitted=True)
        biased_log.append(rec)
        oracle_log.append(rec)

    biased_train = [c0]
    oracle_train = [c0]
    model_b: TrainedModel = model0
    model_o: TrainedModel = model0
    batches: list[np.ndarray] = [c0]
    truncated = False
    completed = 0

    for i in range(1, cfg.iterations + 1):
        pool = np.flatnonzero(~sampled)
        if len(pool) < cfg.n_prime:
            truncated = True
            break
        rng = np.random.default_rng(derive_seed(cfg.seed, "sample", i))
        batch = np.sort(rng.choice(pool, size=cfg.n_prime, replace=False))
        sampled[batch] = True
        batches.append(batch)
        y_batch = U.y[batch]

        # biased run: admit predicted repayers only
        scores_b = predict_proba(model_b, U.X[batch])
        yhat_b = apply_threshold(scores_b, tau)
        admitted = yhat_b == 1
        _tally_add(biased_tally, confusion(yhat_b[admitted], y_batch[admitted]))
        biased.points.append(_point(i, _tally_counts(biased_tally)))
        for t, row_idx in enumerate(batch):
            biased_log.append(ApplicantRecord(
                row_index=int(row_idx), iteration=i, score=float(scores_b[t]),
                yhat=int(yhat_b[t]), y=int(y_batch[t]),
                admitted=bool(admitted[t])))
        if admitted.any():
            biased_train.append(batch[admitted])

        # oracle run: no filtering
        scores_o = predict_proba(model_o, U.X[batch])
        yhat_o = apply_threshold(scores_o, tau)
        _tally_add(oracle_tally, confusion(yhat_o, y_batch))
        oracle.points.append(_point(i, _tally_counts(oracle_tally)))
        for t, row_idx in enumerate(batch):
            oracle_log.append(ApplicantRecord(
                row_index=int(row_idx), iteration=i, score=float(scores_o[t]),
                yhat=int(yhat_o[t]), y=int(y_batch[t]), admitted=True))
        oracle_train.append(batch)

        completed = i
        if cfg.refit_each_iteration and i < cfg.iterations:
            params_i = replace(cfg.learner, seed=derive_seed(cfg.seed, "fit", i))
            model_b = fit(params_i, U.subset(np.concatenate(biased_train),
                                             note=f"C({i}) biased"))
            model_o = fit(params_i, U.subset(np.concatenate(oracle_train),
                                             note=f"C({i}) oracle"))

    metadata = {
        "sampling_pool": "each batch excludes every previously sampled "
                         "applicant and is shared by both runs",
        "iteration0_confusion": "in-sample admission-time predictions of the "
                                "shared initial model on C(0)",
        "admission_predictions": "kept from admission time; clients are not "
                                 "re-scored by later models",
    }
    return PairedRunResult(config=cfg, resolved_tau=tau, biased=biased,
                           oracle=oracle, biased_log=biased_log,
                           oracle_log=oracle_log, sampled_batches=batches,
                           truncated=truncated, completed_iterations=completed,
                           metadata=metadata)


SERIES_COLUMNS = ["run", "iteration", "tp", "fp", "tn", "fn", "accuracy",
                  "precision", "recall", "pct_fn", "pct_fp", "population"]


def series_to_csv(result: PairedRunResult) -> str:
    """Long-format export of both metric series."""
    lines = [",".join(SERIES_COLUMNS)]
    for series in (result.biased, result.oracle):
        for p in series.points:
            lines.append(",".join([
                series.run, str(p.iteration), str(p.tp), str(p.fp), str(p.tn),
                str(p.fn), format_number(p.accuracy),
                format_number(p.precision), format_number(p.recall),
                format_number(p.pct_fn), format_number(p.pct_fp),
                str(p.population),
            ]))
    return "\n".join(lines) + "\n"


def parse_series_csv(text: str) -> dict[str, list[MetricPoint]]:
    """Parse a series CSV back into per-run metric points."""
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0].split(",") != SERIES_COLUMNS:
        raise SimulationError("not a series CSV")
    out: dict[str, list[MetricPoint]] = {}
    for ln in lines[1:]:
        cells = ln.split(",")
        run = cells[0]
        point = MetricPoint(
            iteration=int(cells[1]), tp=int(cells[2]), fp=int(cells[3]),
            tn=int(cells[4]), fn=int(cells[5]), accuracy=float(cells[6]),
            precision=float(cells[7]) if cells[7] else None,
            recall=float(cells[8]) if cells[8] else None,
            pct_fn=float(cells[9]), pct_fp=float(cells[10]),
            population=int(cells[11]))
        out.setdefault(run, []).append(point)
    return out
