"""Experimental protocol: PLM/HM splits, geographic approaches, macro AUROC.

Population-level models (PLM) are tested on users absent from training. Hybrid
models (HM) add the other half of each test user's rows to training and
remove as many rows at random, so HM and PLM train on equally many rows.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import MoodbenchError
from .dataset import Dataset, KNNImputer, Task, downsample_balanced, largest_remainder
from .forest import ForestParams, SingleClass, fit, gini_importance, predict_proba

log = logging.getLogger(__name__)

N_FOLDS = 5
DEFAULT_ITERATIONS = 10

CONTINENTS = {
    "Europe": ("IT", "DK", "UK"),
    "Asia": ("CN", "IN", "MN"),
}


class TooFewUsers(MoodbenchError, ValueError):
    pass


class RemovalExceedsTrain(MoodbenchError, ValueError):
    pass


class SingleClassInTest(MoodbenchError, ValueError):
    pass


class InfeasibleCell(MoodbenchError, ValueError):
    pass


class ModelType(enum.Enum):
    PLM = "plm"
    HM = "hm"

    @classmethod
    def parse(cls, s) -> ModelType:
        if isinstance(s, ModelType):
            return s
        return cls(str(s).lower())


@dataclass(frozen=True)
class Approach:
    """One geographic scope.

    kind is one of country, continent, agnostic1, agnostic2, multi. For
    agnostic2, ``train_countries`` empty means every other country.
    """

    kind: str
    country: str | None = None
    continent: str | None = None
    train_country: str | None = None
    test_country: str | None = None
    train_countries: tuple[str, ...] = ()
    balanced: bool = False

    def __post_init__(self):
        k = self.kind
        if k == "country" and not self.country:
            raise ValueError("country-specific approach needs a country")
        if k == "continent" and self.continent not in CONTINENTS:
            raise ValueError(f"continent must be one of {sorted(CONTINENTS)}")
        if k == "agnostic1":
            if not self.train_country or not self.test_country:
                raise ValueError("country-agnostic I needs train and test countries")
            if self.train_country == self.test_country:
                raise ValueError("country-agnostic I requires train != test country")
        if k == "agnostic2" and not self.test_country:
            raise ValueError("country-agnostic II needs a test country")
        if k not in ("country", "continent", "agnostic1", "agnostic2", "multi"):
            raise ValueError(f"unknown approach kind {k!r}")

    @property
    def key(self) -> str:
        if self.kind == "country":
            s = f"country:{self.country}"
        elif self.kind == "continent":
            s = f"continent:{self.continent}"
        elif self.kind == "agnostic1":
            s = f"agnostic1:{self.train_country}>{self.test_country}"
        elif self.kind == "agnostic2":
            s = f"agnostic2:{self.test_country}"
            if self.train_countries:
                s += "<" + ",".join(self.train_countries)
        else:
            s = "multi"
        return s + (":balanced" if self.balanced else "")

    @property
    def label(self) -> str:
        names = {"country": self.country, "continent": self.continent,
                 "agnostic1": f"{self.train_country} -> {self.test_country}",
                 "agnostic2": f"Agnostic II {self.test_country}",
                 "multi": "Multi-Country"}
        base = names[self.kind]
        return f"{base} (Balanced)" if self.balanced else base

    @classmethod
    def parse(cls, spec: str, balanced: bool = False) -> Approach:
        parts = spec.split(":")
        if parts and parts[-1] == "balanced":
            balanced = True
            parts = parts[:-1]
        kind, arg = parts[0], (parts[1] if len(parts) > 1 else "")
        kind = {"country-specific": "country", "continent-specific": "continent",
                "agnostic-i": "agnostic1", "agnostic-ii": "agnostic2",
                "multi-country": "multi"}.get(kind, kind)
        if kind == "country":
            return cls("country", country=arg, balanced=balanced)
        if kind == "continent":
            return cls("continent", continent=arg, balanced=balanced)
        if kind == "agnostic1":
            tr, _, te = arg.partition(">")
            return cls("agnostic1", train_country=tr, test_country=te, balanced=balanced)
        if kind == "agnostic2":
            te, _, tr = arg.partition("<")
            return cls("agnostic2", test_country=te,
                       train_countries=tuple(c for c in tr.split(",") if c), balanced=balanced)
        if kind == "multi":
            return cls("multi", balanced=balanced)
        raise ValueError(f"unknown approach {spec!r}")


def expand_approaches(spec: str, countries: Sequence[str], balanced: bool = False) -> list[Approach]:
    """Expand an approach name without arguments to every admissible scope."""
    name = spec.split(":")[0]
    has_arg = ":" in spec and spec.split(":")[1] not in ("", "balanced")
    if has_arg or name in ("multi", "multi-country"):
        return [Approach.parse(spec, balanced)]
    bal = balanced or spec.endswith(":balanced")
    countries = sorted(countries)
    if name in ("country", "country-specific"):
        return [Approach("country", country=c, balanced=bal) for c in countries]
    if name in ("continent", "continent-specific"):
        return [Approach("continent", continent=k, balanced=bal)
                for k, members in CONTINENTS.items() if set(members) <= set(countries)]
    if name in ("agnostic1", "agnostic-i"):
        return [Approach("agnostic1", train_country=a, test_country=b, balanced=bal)
                for a in countries for b in countries if a != b]
    if name in ("agnostic2", "agnostic-ii"):
        return [Approach("agnostic2", test_country=c, balanced=bal) for c in countries]
    raise ValueError(f"unknown approach {spec!r}")


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitPlan:
    iteration: int
    train_rows: np.ndarray
    test_rows: np.ndarray
    test_users: tuple
    personal_rows: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    removed_rows: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    model_type: ModelType = ModelType.PLM


def _stratified_half(rows: np.ndarray, labels: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Split one user's rows into (test, held-out) with ceil(n/2) tested, stratified by class."""
    n = len(rows)
    target = (n + 1) // 2
    classes = np.unique(labels[rows])
    counts = [int((labels[rows] == c).sum()) for c in classes]
    quota = largest_remainder(counts, target, rng)
    test = []
    for c, q in zip(classes, quota):
        pool = rows[labels[rows] == c]
        test.append(rng.permutation(pool)[:q])
    test = np.sort(np.concatenate(test)) if test else np.array([], dtype=np.int64)
    rest = np.setdiff1d(rows, test)
    return test, rest


def make_plm_split(users: np.ndarray, labels: np.ndarray, seed: int, iteration: int,
                   scope: np.ndarray | None = None, train_pool: np.ndarray | None = None) -> SplitPlan:
    """Leave-n-users-out split.

    Test users are one fold of a fresh 5-fold user partition of ``scope``.
    Half of each test user's rows (stratified by class) are tested; the
    other half is held back for personalization. Training takes every
    ``scope`` row of the remaining users, or ``train_pool`` when given.
    """
    users = np.asarray(users)
    n = len(users)
    scope = np.arange(n) if scope is None else np.asarray(scope)
    uniq = sorted(set(users[scope].tolist()))
    if len(uniq) < N_FOLDS:
        raise TooFewUsers(f"{len(uniq)} users in scope, need at least {N_FOLDS}")
    rng = np.random.default_rng([seed, iteration])
    perm = rng.permutation(len(uniq))
    fold0 = np.array_split(perm, N_FOLDS)[0]
    test_users = tuple(sorted(uniq[i] for i in fold0))
    in_test = np.isin(users[scope], test_users)

    test, personal = [], []
    for u in test_users:
        rows = scope[users[scope] == u]
        t, rest = _stratified_half(rows, labels, rng)
        test.append(t)
        personal.append(rest)
    test_rows = np.sort(np.concatenate(test))
    personal_rows = np.sort(np.concatenate(personal))
    if train_pool is None:
        train_rows = np.sort(scope[~in_test])
    else:
        train_rows = np.sort(np.setdiff1d(train_pool, scope[in_test]))
    return SplitPlan(iteration, train_rows, test_rows, test_users, personal_rows)


def make_hm_split(plm: SplitPlan, seed: int) -> SplitPlan:
    k = len(plm.personal_rows)
    if k > len(plm.train_rows):
        raise RemovalExceedsTrain(f"{k} personalization rows exceed {len(plm.train_rows)} training rows")
    rng = np.random.default_rng([seed, plm.iteration, 1])
    removed = np.sort(rng.choice(plm.train_rows, size=k, replace=False))
    kept = np.setdiff1d(plm.train_rows, removed)
    train = np.sort(np.concatenate([kept, plm.personal_rows]))
    return SplitPlan(plm.iteration, train, plm.test_rows.copy(), plm.test_users,
                     plm.personal_rows.copy(), removed, ModelType.HM)


# ---------------------------------------------------------------------------
# AUROC


def auroc_binary(scores, labels) -> float:
    """Mann-Whitney AUROC; ties between a positive and a negative count half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInTest("AUROC needs both classes in the test labels")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    # midranks over tied score runs
    edges = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [len(s)]])
    mid = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(mid, ends - starts)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_macro(proba: np.ndarray, labels, n_classes: int | None = None) -> float:
    """Unweighted mean of one-vs-rest AUROC over classes present in ``labels``.

    ``proba`` columns are class indices; ``labels`` hold those indices.
    """
    proba = np.asarray(proba, dtype=float)
    labels = np.asarray(labels)
    present = np.unique(labels)
    if len(present) < 2:
        raise SingleClassInTest("macro AUROC needs at least two classes in the test labels")
    if proba.shape[1] == 2 and len(present) == 2:
        return auroc_binary(proba[:, 1], labels == 1)
    return float(np.mean([auroc_binary(proba[:, c], labels == c) for c in present]))


# ---------------------------------------------------------------------------
# cells


@dataclass
class EvalResult:
    approach: Approach
    model_type: ModelType
    task: Task
    per_iteration: list[float]
    n_train: list[int]
    n_test: list[int]
    seed: int
    importances: list[float] | None = None
    feature_names: tuple[str, ...] = ()

    @property
    def valid(self) -> list[float]:
        return [v for v in self.per_iteration if not math.isnan(v)]

    @property
    def mean(self) -> float:
        v = self.valid
        return float(np.mean(v)) if v else math.nan

    @property
    def std(self) -> float:
        v = self.valid
        return float(np.std(v)) if v else math.nan

    def to_json(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and math.isnan(x) else x
        out = {
            "approach": self.approach.key,
            "scope": self.approach.label,
            "kind": self.approach.kind,
            "model_type": self.model_type.value.upper(),
            "task": self.task.value,
            "balanced": self.approach.balanced,
            "mean": clean(self.mean),
            "std": clean(self.std),
            "per_iteration": [clean(v) for v in self.per_iteration],
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seed": self.seed,
        }
        if self.importances is not None:
            out["importances"] = dict(zip(self.feature_names, self.importances))
        return out


def _scope_rows(ds: Dataset, approach: Approach) -> tuple[np.ndarray, np.ndarray | None]:
    """(test scope rows, explicit training pool or None)."""
    country = ds.country
    k = approach.kind
    if k == "country":
        return np.flatnonzero(country == approach.country), None
    if k == "continent":
        return np.flatnonzero(np.isin(country, CONTINENTS[approach.continent])), None
    if k == "multi":
        return np.arange(len(ds)), None
    if k == "agnostic1":
        return (np.flatnonzero(country == approach.test_country),
                np.flatnonzero(country == approach.train_country))
    train = approach.train_countries or tuple(c for c in ds.countries() if c != approach.test_country)
    if approach.test_country in train:
        raise InfeasibleCell("country-agnostic II cannot train on its test country")
    return np.flatnonzero(country == approach.test_country), np.flatnonzero(np.isin(country, train))


def _countries_of(ds: Dataset, approach: Approach) -> list[str]:
    k = approach.kind
    if k == "country":
        return [approach.country]
    if k == "continent":
        return list(CONTINENTS[approach.continent])
    if k == "agnostic1":
        return [approach.train_country, approach.test_country]
    if k == "agnostic2":
        train = approach.train_countries or [c for c in ds.countries() if c != approach.test_country]
        return [approach.test_country, *train]
    return ds.countries()


def check_feasible(ds: Dataset, approach: Approach, model_type: ModelType) -> None:
    if approach.kind == "agnostic2" and model_type is ModelType.HM:
        raise InfeasibleCell("country-agnostic II HM coincides with multi-country HM; run that cell instead")
    present = set(ds.countries())
    for c in _countries_of(ds, approach):
        if c not in present:
            raise InfeasibleCell(f"country {c} has no rows")
    test_scope, _ = _scope_rows(ds, approach)
    n_users = len(set(ds.user_id[test_scope].tolist()))
    if n_users < N_FOLDS:
        where = approach.test_country or approach.country or approach.continent or "dataset"
        raise InfeasibleCell(f"{where}: {n_users} users, need at least {N_FOLDS}")


def _cell_seed(seed: int, approach: Approach, task: Task) -> int:
    return int(zlib.crc32(f"{seed}|{approach.key}|{task.value}".encode()))


def plan_splits(ds: Dataset, approach: Approach, task: Task, seed: int, iteration: int,
                model_types=(ModelType.PLM, ModelType.HM)) -> tuple[Dataset, np.ndarray, dict]:
    """Working dataset, its row ids in ``ds`` and the split plan per model type."""
    cseed = _cell_seed(seed, approach, task)
    work = ds
    base = np.arange(len(ds))
    if approach.balanced:
        sub = ds.subset(np.flatnonzero(np.isin(ds.country, _countries_of(ds, approach))))
        per = min(int((sub.country == c).sum()) for c in sub.countries())
        bal = downsample_balanced(sub, per, [cseed, iteration, 7], task)
        # map back to original row ids
        key = {rid: i for i, rid in enumerate(ds.report_id.tolist())}
        base = np.array([key[r] for r in bal.report_id.tolist()], dtype=np.int64)
        work = bal
    scope, pool = _scope_rows(work, approach)
    plm = make_plm_split(work.user_id, work.labels(task), cseed, iteration, scope, pool)
    plans = {}
    if ModelType.PLM in model_types:
        plans[ModelType.PLM] = plm
    if ModelType.HM in model_types:
        plans[ModelType.HM] = make_hm_split(plm, cseed)
    return work, base, plans


def run_iteration(ds: Dataset, approach: Approach, task: Task, params: ForestParams,
                  seed: int, iteration: int, model_types=(ModelType.PLM, ModelType.HM),
                  knn_k: int = 5) -> dict:
    """One split draw; PLM and HM share the same underlying user split."""
    cseed = _cell_seed(seed, approach, task)
    work, base, plans = plan_splits(ds, approach, task, seed, iteration, model_types)
    labels = work.labels(task)
    out = {}
    n_classes = len(task.classes)
    for mt, plan in plans.items():
        tr, te = plan.train_rows, plan.test_rows
        rec = {"plan": plan, "base": base, "n_train": len(tr), "n_test": len(te),
               "auroc": math.nan, "importances": None}
        out[mt] = rec
        y_tr, y_te = labels[tr], labels[te]
        if len(np.unique(y_te)) < 2:
            log.warning("%s %s iteration %d: single class in test, dropped",
                        approach.key, mt.value, iteration)
            continue
        # columns never observed in training carry nothing and cannot be imputed
        cols = np.flatnonzero(~np.isnan(work.X[tr]).all(axis=0))
        if len(cols) < work.X.shape[1]:
            log.info("%s %s iteration %d: %d unobserved features left out",
                     approach.key, mt.value, iteration, work.X.shape[1] - len(cols))
        X_tr, X_te = work.X[np.ix_(tr, cols)], work.X[np.ix_(te, cols)]
        if np.isnan(X_tr).any() or np.isnan(X_te).any():
            imp = KNNImputer(knn_k, [work.feature_names[j] for j in cols]).fit(X_tr)
            X_tr, X_te = imp.transform(X_tr), imp.transform(X_te)
        fp = ForestParams(**{**params.__dict__, "seed": int(cseed + 1000 * iteration + (mt is ModelType.HM))})
        try:
            forest = fit(X_tr, y_tr, fp)
        except SingleClass:
            log.warning("%s %s iteration %d: single class in training, dropped",
                        approach.key, mt.value, iteration)
            continue
        proba = np.zeros((len(te), n_classes))
        proba[:, forest.classes] = predict_proba(forest, X_te)
        rec["auroc"] = auroc_macro(proba, y_te, n_classes)
        importances = np.zeros(work.X.shape[1])
        importances[cols] = gini_importance(forest)
        rec["importances"] = importances
    return out


def run_cells(ds: Dataset, approach: Approach, task: Task, params: ForestParams | None = None,
              seed: int = 0, iterations: int = DEFAULT_ITERATIONS,
              model_types=(ModelType.PLM, ModelType.HM), knn_k: int = 5) -> dict[ModelType, EvalResult]:
    """Evaluate several model types of one approach on shared splits."""
    params = params or ForestParams()
    model_types = tuple(ModelType.parse(m) for m in model_types)
    for mt in model_types:
        check_feasible(ds, approach, mt)
    acc = {mt: ([], [], [], []) for mt in model_types}
    for it in range(iterations):
        res = run_iteration(ds, approach, task, params, seed, it, model_types, knn_k)
        for mt, rec in res.items():
            a, ntr, nte, imps = acc[mt]
            a.append(rec["auroc"])
            ntr.append(rec["n_train"])
            nte.append(rec["n_test"])
            if rec["importances"] is not None:
                imps.append(rec["importances"])
    results = {}
    for mt, (a, ntr, nte, imps) in acc.items():
        mean_imp = np.mean(imps, axis=0).tolist() if imps else None
        results[mt] = EvalResult(approach, mt, task, a, ntr, nte, seed, mean_imp, ds.feature_names)
        if not results[mt].valid:
            log.warning("%s %s: no valid iterations", approach.key, mt.value)
    return results


def run_cell(ds: Dataset, approach: Approach, model_type, task: Task,
             params: ForestParams | None = None, seed: int = 0,
             iterations: int = DEFAULT_ITERATIONS, knn_k: int = 5) -> EvalResult:
    mt = ModelType.parse(model_type)
    return run_cells(ds, approach, task, params, seed, iterations, (mt,), knn_k)[mt]


def write_results_json(results: Sequence[EvalResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_json() for r in results], fh, indent=2)
        fh.write("\n")
