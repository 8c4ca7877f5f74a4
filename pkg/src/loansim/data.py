"""Loading, cleaning, down-sampling, splitting and synthesizing tabular data.

The raw loan datasets label the *default* event; everywhere downstream the
positive class is "will repay", because the social-cost accounting (FP =
wrongly granted, FN = wrongly denied) only makes sense with repay as the
positive class. The inversion happens once, at load time, controlled by
``positive_means_default``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd


class DataError(ValueError):
    """Raised for malformed input tables or infeasible transformations."""


@dataclass
class RawTable:
    """A parsed delimited table: numeric or categorical columns, missing allowed.

    A column is numeric iff every non-missing cell parses as a float;
    otherwise it is categorical. Missing cells are NaN in either case.
    """

    frame: pd.DataFrame
    label_column: str
    positive_means_default: bool

    @property
    def column_names(self) -> list[str]:
        return list(self.frame.columns)

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    def null_counts(self) -> np.ndarray:
        return self.frame.isna().sum().to_numpy()


@dataclass
class Dataset:
    """Numeric feature matrix plus binary repay labels (1 = will repay)."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    provenance: str = ""

    def __post_init__(self) -> None:
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise DataError("X must be a 2-d matrix")
        if len(self.y) != self.X.shape[0]:
            raise DataError("label vector length does not match X")
        if self.X.shape[1] != len(self.feature_names):
            raise DataError("feature_names length does not match X")
        if np.isnan(self.X).any():
            raise DataError("X contains missing values")
        if not np.isin(self.y, (0, 1)).all():
            raise DataError("labels must be 0 or 1")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def majority_share(self) -> float:
        """Share of the majority class (the Table-1 imbalance-ratio convention)."""
        if self.n_rows == 0:
            raise DataError("empty dataset has no majority share")
        p = float(self.y.mean())
        return max(p, 1.0 - p)

    def subset(self, indices: np.ndarray, note: str = "") -> "Dataset":
        indices = np.asarray(indices)
        prov = self.provenance + (f" | {note}" if note else "")
        return Dataset(self.X[indices], self.y[indices], list(self.feature_names), prov)


@dataclass(frozen=True)
class ImbalanceRatio:
    """Target share of the majority class, in [0.5, 1]."""

    value: float

    def __post_init__(self) -> None:
        if not 0.5 <= self.value <= 1.0:
            raise DataError(f"majority share must be in [0.5, 1], got {self.value}")


def load_csv(path: str | os.PathLike, label_column: str,
             positive_means_default: bool = True) -> RawTable:
    """Parse a comma-delimited file with a header row into a RawTable.

    Empty cells are missing. Ragged rows and duplicate header names are
    rejected. The label column and its polarity are carried along for
    ``to_dataset``.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise DataError(f"{path}: empty file or missing header row")
    if len(set(header)) != len(header):
        dupes = sorted({c for c in header if header.count(c) > 1})
        raise DataError(f"{path}: duplicate header names {dupes}")
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not found in header")

    try:
        frame = pd.read_csv(path, header=None, names=header, skiprows=1,
                            dtype=str, na_filter=False, encoding="utf-8")
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: ragged rows ({exc})") from exc
    # Short rows surface as real NaN because na_filter is off for values.
    if frame.isna().to_numpy().any():
        raise DataError(f"{path}: ragged rows (a row has fewer cells than the header)")

    typed = {}
    for col in header:
        values = frame[col].to_numpy(dtype=object)
        missing = np.array([v == "" for v in values], dtype=bool)
        parsed = None
        if (~missing).any():
            try:
                parsed = np.array([float(v) for v in values[~missing]])
            except ValueError:
                parsed = None
        if parsed is not None:
            out = np.full(len(values), np.nan)
            out[~missing] = parsed
            typed[col] = out
        else:
            out = values.copy()
            out[missing] = np.nan
            typed[col] = out
    return RawTable(pd.DataFrame(typed, columns=header), label_column,
                    positive_means_default)


def drop_high_null_columns(t: RawTable, k: int) -> RawTable:
    """Remove the k columns with the most missing cells (ties: leftmost first)."""
    n_cols = len(t.frame.columns)
    if k >= n_cols:
        raise DataError(f"cannot drop {k} of {n_cols} columns")
    if k == 0:
        return replace(t, frame=t.frame.copy())
    counts = t.null_counts()
    order = np.argsort(-counts, kind="stable")  # ties keep original column order
    dropped = set(order[:k])
    keep = [c for i, c in enumerate(t.frame.columns) if i not in dropped]
    if t.label_column not in keep:
        raise DataError("null-column drop would remove the label column")
    return replace(t, frame=t.frame[keep].copy())


def drop_null_rows(t: RawTable) -> RawTable:
    """Keep only rows with no missing cells, preserving order."""
    mask = ~t.frame.isna().any(axis=1)
    return replace(t, frame=t.frame[mask].reset_index(drop=True))


def to_dataset(t: RawTable) -> Dataset:
    """Finalize a cleaned table into a Dataset.

    Categorical columns are one-hot encoded with lexicographic category
    ordering; the label is inverted to repay polarity when the raw labels
    mark default. The table must contain no missing cells.
    """
    null_cols = [c for c in t.frame.columns if t.frame[c].isna().any()]
    if null_cols:
        raise DataError(f"missing values remain in columns {null_cols}; "
                        "drop or clean rows first")
    raw_label = t.frame[t.label_column].to_numpy()
    try:
        raw_label = raw_label.astype(np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"label column {t.label_column!r} is not numeric") from exc
    if not np.isin(raw_label, (0.0, 1.0)).all():
        raise DataError(f"label column {t.label_column!r} must be binary 0/1")
    y = raw_label.astype(np.int64)
    if t.positive_means_default:
        y = 1 - y

    columns: list[np.ndarray] = []
    names: list[str] = []
    for col in t.frame.columns:
        if col == t.label_column:
            continue
        values = t.frame[col].to_numpy()
        if values.dtype == object:
            cats = sorted({str(v) for v in values})
            for cat in cats:
                columns.append((values.astype(str) == cat).astype(np.float64))
                names.append(f"{col}={cat}")
        else:
            columns.append(values.astype(np.float64))
            names.append(col)
    if not columns:
        raise DataError("table has no feature columns besides the label")
    X = np.column_stack(columns)
    return Dataset(X, y, names, provenance=f"label={t.label_column!r}, "
                   f"inverted={t.positive_means_default}")


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; 0 for constant inputs (they carry no signal)."""
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0:
        return 0.0
    return float((a * b).sum() / denom)


def correlation_feature_select(ds: Dataset, top_m: int,
                               pair_threshold: float) -> Dataset:
    """Two-stage correlation filter.

    Stage 1 keeps the top_m features by |Pearson correlation with the
    label|. Stage 2 scans the survivors strongest-first and drops any
    feature whose |pairwise correlation| with an already-kept feature
    exceeds pair_threshold, i.e. of each offending pair the member with
    the lower label correlation goes. Ties break on original column
    order.
    """
    d = ds.n_features
    if not 1 <= top_m <= d:
        raise DataError(f"top_m must be in [1, {d}], got {top_m}")
    if not 0.0 < pair_threshold <= 1.0:
        raise DataError(f"pair_threshold must be in (0, 1], got {pair_threshold}")

    yf = ds.y.astype(np.float64)
    label_corr = np.array([abs(_pearson(ds.X[:, j], yf)) for j in range(d)])
    # strongest first, ties by original column order
    strength_order = np.lexsort((np.arange(d), -label_corr))
    candidates = strength_order[:top_m]

    kept: list[int] = []
    for j in candidates:
        ok = True
        for k in kept:
            if abs(_pearson(ds.X[:, j], ds.X[:, k])) > pair_threshold:
                ok = False
                break
        if ok:
            kept.append(int(j))
    kept.sort()
    sel = Dataset(ds.X[:, kept], ds.y, [ds.feature_names[j] for j in kept],
                  ds.provenance + f" | corr_select(top_m={top_m}, "
                  f"pair_threshold={pair_threshold})")
    return sel


def downsample_to_ratio(ds: Dataset, target: ImbalanceRatio, seed: int) -> Dataset:
    """Remove uniformly-sampled majority rows until the majority share
    is within one row of the target. Minority rows are never touched."""
    n = ds.n_rows
    n_pos = int(ds.y.sum())
    n_neg = n - n_pos
    maj_label = 1 if n_pos >= n_neg else 0
    n_maj, n_min = (n_pos, n_neg) if maj_label == 1 else (n_neg, n_pos)

    t = target.value
    if t >= 1.0:
        if n_min == 0:
            return ds.subset(np.arange(n), note=f"downsample(target={t})")
        raise DataError("cannot reach a single-class table by removing majority rows")
    want_maj = int(round(t * n_min / (1.0 - t)))
    if want_maj > n_maj:
        raise DataError(
            f"target majority share {t} exceeds the current share "
            f"{n_maj / n:.4f}; only majority rows may be removed")
    if want_maj < n_min:
        raise DataError(f"target {t} is below the dataset's minority share")

    rng = np.random.default_rng(seed)
    maj_idx = np.flatnonzero(ds.y == maj_label)
    keep_maj = rng.choice(maj_idx, size=want_maj, replace=False)
    keep = np.zeros(n, dtype=bool)
    keep[ds.y != maj_label] = True
    keep[keep_maj] = True
    out = ds.subset(np.flatnonzero(keep), note=f"downsample(target={t}, seed={seed})")

    achieved = out.majority_share()
    if abs(achieved - t) > 1.0 / out.n_rows:
        raise DataError(f"downsampling missed the target: {achieved:.6f} vs {t}")
    return out


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded uniform partition into (train, eval) of sizes ⌊n·f⌋ and n−⌊n·f⌋."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = ds.n_rows
    n_train = int(np.floor(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise DataError(f"split of {n} rows at {train_fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    eval_idx = np.sort(perm[n_train:])
    return (ds.subset(train_idx, note=f"split-train(f={train_fraction}, seed={seed})"),
            ds.subset(eval_idx, note=f"split-eval(f={train_fraction}, seed={seed})"))


def synth_generate(n: int, d: int, class_sep: float, majority_share: float,
                   seed: int) -> Dataset:
    """Two Gaussian clusters separated by class_sep along a random direction.

    The majority class is repay (y=1), holding majority_share of the rows.
    """
    if n < 2 or d < 1:
        raise DataError("need n >= 2 and d >= 1")
    if not 0.5 <= majority_share < 1.0:
        raise DataError(f"majority_share must be in [0.5, 1), got {majority_share}")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    n_pos = int(round(n * majority_share))
    n_pos = min(max(n_pos, 1), n - 1)
    y = np.concatenate([np.ones(n_pos, dtype=np.int64),
                        np.zeros(n - n_pos, dtype=np.int64)])
    X = rng.standard_normal((n, d))
    X[y == 1] += 0.5 * class_sep * direction
    X[y == 0] -= 0.5 * class_sep * direction
    order = rng.permutation(n)
    return Dataset(X[order], y[order], [f"x{j}" for j in range(d)],
                   provenance=f"synth(n={n}, d={d}, sep={class_sep}, "
                   f"maj={majority_share}, seed={seed})")


def save_dataset(ds: Dataset, path: str | os.PathLike,
                 label_column: str = "", positive_means_default: bool = True) -> None:
    """Write the dataset cache: CSV with a reserved final column "y" plus a
    JSON sidecar naming the original label column and polarity."""
    frame = pd.DataFrame(ds.X, columns=ds.feature_names)
    frame["y"] = ds.y
    frame.to_csv(path, index=False, lineterminator="\n")
    sidecar = {
        "label_column": label_column,
        "positive_means_default": positive_means_default,
        "feature_names": list(ds.feature_names),
        "n_rows": ds.n_rows,
        "majority_share": ds.majority_share(),
        "provenance": ds.provenance,
    }
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sidecar_path(path: str | os.PathLike) -> str:
    base, _ = os.path.splitext(str(path))
    return base + ".schema.json"


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Read a dataset cache written by ``save_dataset``."""
    frame = pd.read_csv(path)
    if len(frame.columns) < 2 or frame.columns[-1] != "y":
        raise DataError(f"{path}: dataset cache must end with a 'y' column")
    y = frame["y"].to_numpy()
    X = frame.iloc[:, :-1].to_numpy(dtype=np.float64)
    provenance = f"cache({os.path.basename(str(path))})"
    try:
        with open(sidecar_path(path), "r", encoding="utf-8") as fh:
            provenance = json.load(fh).get("provenance", provenance)
    except FileNotFoundError:
        pass
    return Dataset(X, y, list(frame.columns[:-1]), provenance)
