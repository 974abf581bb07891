"""Modeling table: mood label reductions, kNN imputation and per-country balancing."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import InvalidMood, MoodbenchError

CLASS_ORDER = ("negative", "neutral", "positive")


class Task(enum.Enum):
    TWO = "two"
    THREE = "three"

    @property
    def classes(self) -> tuple[str, ...]:
        if self is Task.TWO:
            return ("negative", "positive")
        return CLASS_ORDER

    @classmethod
    def parse(cls, s: str | Task) -> Task:
        if isinstance(s, Task):
            return s
        aliases = {"two": cls.TWO, "2": cls.TWO, "twoclass": cls.TWO,
                   "three": cls.THREE, "3": cls.THREE, "threeclass": cls.THREE}
        try:
            return aliases[str(s).lower().replace("_", "").replace("-", "")]
        except KeyError:
            raise ValueError(f"unknown task {s!r}") from None


def map_label(mood_raw: int, task: Task) -> str:
    if mood_raw not in (1, 2, 3, 4, 5):
        raise InvalidMood(f"mood_raw must be in 1..5, got {mood_raw!r}")
    if mood_raw <= 2:
        return "negative"
    if task is Task.THREE and mood_raw == 3:
        return "neutral"
    return "positive"


def encode_labels(mood_raw: Sequence[int] | np.ndarray, task: Task) -> np.ndarray:
    """Class indices into ``task.classes`` (negative < neutral < positive)."""
    mood = np.asarray(mood_raw)
    if mood.size and (mood.min() < 1 or mood.max() > 5):
        raise InvalidMood("mood_raw outside 1..5")
    if task is Task.TWO:
        return (mood >= 3).astype(np.int64)
    return np.where(mood <= 2, 0, np.where(mood == 3, 1, 2)).astype(np.int64)


class AllMissingFeature(MoodbenchError, ValueError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"feature {name!r} has no observed values")


class InsufficientRows(MoodbenchError, ValueError):
    def __init__(self, country, have, need):
        self.country = country
        super().__init__(f"country {country!r} has {have} rows, {need} required")


@dataclass
class Dataset:
    X: np.ndarray                # rows x features, NaN = missing
    feature_names: tuple[str, ...]
    report_id: np.ndarray
    user_id: np.ndarray
    country: np.ndarray
    ts: np.ndarray
    mood_raw: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        n, f = self.X.shape
        if f != len(self.feature_names):
            raise ValueError("feature_names length does not match X")
        for name in ("report_id", "user_id", "country", "ts", "mood_raw"):
            arr = np.asarray(getattr(self, name))
            if len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} entries for {n} rows")
            setattr(self, name, arr)
        if n and (self.country == "").any():
            raise ValueError("every row needs a country")

    def __len__(self) -> int:
        return self.X.shape[0]

    def labels(self, task: Task) -> np.ndarray:
        return encode_labels(self.mood_raw, task)

    def countries(self) -> list[str]:
        return sorted(set(self.country.tolist()))

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.feature_names, self.report_id[idx],
                       self.user_id[idx], self.country[idx], self.ts[idx],
                       self.mood_raw[idx], dict(self.meta))

    @classmethod
    def from_rows(cls, rows, feature_names: Sequence[str]) -> Dataset:
        rows = list(rows)
        X = (np.vstack([r.values for r in rows]) if rows
             else np.zeros((0, len(feature_names))))
        return cls(X, tuple(feature_names),
                   np.array([r.report_id for r in rows], dtype=object),
                   np.array([r.user_id for r in rows], dtype=object),
                   np.array([r.country for r in rows], dtype=object),
                   np.array([r.ts for r in rows], dtype=np.int64),
                   np.array([r.mood_raw for r in rows], dtype=np.int64))


# ---------------------------------------------------------------------------
# imputation


class KNNImputer:
    """k-nearest-neighbour imputation fitted on a reference (training) matrix.

    Distances are Euclidean over co-observed features after standardising with
    the reference statistics, rescaled by sqrt(F / n_co_observed). A missing
    cell takes the mean of the feature over the k nearest reference rows that
    observe it; ties go to the lower reference row index.
    """

    def __init__(self, k: int = 5, feature_names: Sequence[str] | None = None):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.feature_names = feature_names

    def fit(self, X: np.ndarray) -> KNNImputer:
        X = np.asarray(X, dtype=float)
        obs = ~np.isnan(X)
        empty = np.flatnonzero(~obs.any(axis=0))
        if empty.size:
            j = int(empty[0])
            raise AllMissingFeature(self.feature_names[j] if self.feature_names else j)
        self.mean_ = np.nanmean(X, axis=0)
        sd = np.nanstd(X, axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        self.ref_ = X
        self.ref_obs_ = obs
        self.ref_z_ = np.where(obs, (X - self.mean_) / self.scale_, 0.0)
        return self

    def _distances(self, Z: np.ndarray, obs: np.ndarray) -> np.ndarray:
        R, Ro = self.ref_z_, self.ref_obs_.astype(float)
        Q, Qo = Z, obs.astype(float)
        co = Qo @ Ro.T
        sq = (Q * Q) @ Ro.T + Qo @ (R * R).T - 2.0 * Q @ R.T
        sq = np.maximum(sq, 0.0)
        n_feat = Z.shape[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = np.where(co > 0, sq * n_feat / co, np.inf)
        return d2

    def transform(self, X: np.ndarray, batch: int = 512) -> np.ndarray:
        X = np.array(X, dtype=float, copy=True)
        obs = ~np.isnan(X)
        rows = np.flatnonzero(~obs.all(axis=1))
        for b in range(0, len(rows), batch):
            chunk = rows[b:b + batch]
            Z = np.where(obs[chunk], (X[chunk] - self.mean_) / self.scale_, 0.0)
            D = self._distances(Z, obs[chunk])
            for qi, r in enumerate(chunk):
                for j in np.flatnonzero(~obs[r]):
                    donors = np.flatnonzero(self.ref_obs_[:, j])
                    order = np.argsort(D[qi, donors], kind="stable")[: self.k]
                    X[r, j] = self.ref_[donors[order], j].mean()
        return X


def impute_knn(matrix: np.ndarray, k: int = 5) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if not np.isnan(matrix).any():
        return matrix.copy()
    return KNNImputer(k).fit(matrix).transform(matrix)


# ---------------------------------------------------------------------------
# balancing


def largest_remainder(counts: Sequence[int], total: int, rng=None) -> np.ndarray:
    """Integer quotas proportional to ``counts`` summing to ``total``.

    Seats left after flooring go to the largest remainders; equal remainders
    are ordered by ``rng`` when given, else by position.
    """
    counts = np.asarray(counts, dtype=np.int64)
    s = counts.sum()
    if total > s:
        raise ValueError("total exceeds available counts")
    if s == 0:
        return np.zeros_like(counts)
    exact = counts * total / s
    quota = np.floor(exact).astype(np.int64)
    rem = exact - quota
    left = int(total - quota.sum())
    tiebreak = rng.permutation(len(counts)) if rng is not None else np.arange(len(counts))
    order = np.lexsort((tiebreak, -rem))
    for i in order:
        if left == 0:
            break
        if quota[i] < counts[i]:
            quota[i] += 1
            left -= 1
    return quota


def downsample_balanced(dataset: Dataset, per_country_n: int, seed, task: Task = Task.TWO) -> Dataset:
    """Keep exactly ``per_country_n`` rows per country, stratified by class."""
    rng = np.random.default_rng(seed)
    labels = dataset.labels(task)
    keep = []
    for c in dataset.countries():
        rows = np.flatnonzero(dataset.country == c)
        if len(rows) < per_country_n:
            raise InsufficientRows(c, len(rows), per_country_n)
        classes = np.unique(labels[rows])
        counts = [int((labels[rows] == k).sum()) for k in classes]
        quota = largest_remainder(counts, per_country_n)
        for k, q in zip(classes, quota):
            pool = rows[labels[rows] == k]
            keep.append(rng.choice(pool, size=int(q), replace=False))
    idx = np.sort(np.concatenate(keep)) if keep else np.array([], dtype=np.int64)
    return dataset.subset(idx)


# ---------------------------------------------------------------------------
# features.csv


def read_features_csv(path: str | Path) -> Dataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        fixed = ["report_id", "user_id", "country", "ts_ms", "mood_raw"]
        if header is None or header[:5] != fixed:
            raise ValueError(f"{path}: expected header starting with {','.join(fixed)}")
        names = tuple(header[5:])
        rid, uid, cty, ts, mood, vals = [], [], [], [], [], []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{reader.line_num}: expected {len(header)} fields")
            rid.append(row[0])
            uid.append(row[1])
            cty.append(row[2])
            ts.append(int(row[3]))
            m = int(row[4])
            if m not in (1, 2, 3, 4, 5):
                raise InvalidMood(f"{path}:{reader.line_num}: mood_raw {m}")
            mood.append(m)
            vals.append([math.nan if v == "" else float(v) for v in row[5:]])
    X = np.array(vals, dtype=float) if vals else np.zeros((0, len(names)))
    return Dataset(X, names, np.array(rid, dtype=object), np.array(uid, dtype=object),
                   np.array(cty, dtype=object), np.array(ts, dtype=np.int64),
                   np.array(mood, dtype=np.int64))


def write_dataset_csv(ds: Dataset, path: str | Path) -> None:
    from .features import fmt_value

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["report_id", "user_id", "country", "ts_ms", "mood_raw", *ds.feature_names])
        for i in range(len(ds)):
            w.writerow([ds.report_id[i], ds.user_id[i], ds.country[i], int(ds.ts[i]),
                        int(ds.mood_raw[i]), *(fmt_value(v) for v in ds.X[i])])


def dataset_summary(ds: Dataset) -> dict:
    summary = {"n_rows": len(ds), "n_features": len(ds.feature_names), "countries": {}}
    for c in ds.countries():
        m = ds.country == c
        summary["countries"][c] = {
            "rows": int(m.sum()),
            "users": len(set(ds.user_id[m].tolist())),
            "mood_raw": {str(k): int((ds.mood_raw[m] == k).sum()) for k in range(1, 6)},
            "two_class": dict(zip(Task.TWO.classes,
                                  np.bincount(ds.labels(Task.TWO)[m], minlength=2).tolist())),
            "three_class": dict(zip(Task.THREE.classes,
                                    np.bincount(ds.labels(Task.THREE)[m], minlength=3).tolist())),
        }
    miss = np.isnan(ds.X).mean(axis=0) if len(ds) else np.zeros(len(ds.feature_names))
    summary["missing_rate"] = {n: round(float(r), 6) for n, r in zip(ds.feature_names, miss)}
    return summary


def write_summary(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset_summary(ds), indent=2) + "\n", encoding="utf-8")
