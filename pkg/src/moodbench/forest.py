"""Random forest of CART trees with Gini impurity and Gini importances.

Tree growth runs in a numba kernel. Randomness comes from numpy generators
seeded per tree from the forest seed, so fits are bit-identical across runs
and independent of how trees are scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np

from .core import MoodbenchError

MODEL_FORMAT_VERSION = 1


class SingleClass(MoodbenchError, ValueError):
    pass


class DimensionMismatch(MoodbenchError, ValueError):
    pass


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    features_per_split: int | str = "sqrt"  # "sqrt", "all" or an int
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")

    def mtry(self, n_features: int) -> int:
        f = self.features_per_split
        if f == "sqrt":
            return max(1, int(math.floor(math.sqrt(n_features))))
        if f == "all":
            return n_features
        return max(1, min(int(f), n_features))


# Optional sweep mirroring the grid tried for the original models; defaults
# are used unless a config asks for the sweep.
PARAM_GRID = {
    "n_trees": [50] + list(range(100, 2001, 100)),
    "max_depth": list(range(2, 17, 2)),
    "min_samples_split": list(range(2, 11)),
}


# ---------------------------------------------------------------------------
# numba kernels

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@numba.njit(cache=True)
def _splitmix(state):
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _grow(XT, y, n_classes, presorted, weight, max_depth, min_split, min_leaf, mtry, seed):
    """Grow one tree depth-first over rows with positive (bootstrap) weight.

    ``presorted[f]`` orders all rows by feature f. Each node owns the same
    segment [lo, hi) of every per-feature order, so split search is a linear
    scan and a split is a stable partition of each feature's segment.
    """
    n_feat, n_all = XT.shape
    n = 0
    for r in range(n_all):
        if weight[r] > 0:
            n += 1
    S = np.empty((n_feat, n), np.int64)
    for f in range(n_feat):
        k = 0
        for q in range(n_all):
            r = presorted[f, q]
            if weight[r] > 0:
                S[f, k] = r
                k += 1

    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros((cap, n_classes))
    impurity = np.zeros(cap)
    n_node = np.zeros(cap)

    feats = np.arange(n_feat)
    state = np.zeros(1, np.uint64)
    state[0] = np.uint64(seed)
    goes_left = np.zeros(n_all, np.bool_)
    tmp_r = np.empty(n, np.int64)
    cl = np.zeros(n_classes)
    cr = np.zeros(n_classes)

    st_node = np.zeros(cap, np.int64)
    st_lo = np.zeros(cap, np.int64)
    st_hi = np.zeros(cap, np.int64)
    st_depth = np.zeros(cap, np.int64)
    st_node[0], st_lo[0], st_hi[0], st_depth[0] = 0, 0, n, 0
    sp = 1
    count = 1

    while sp > 0:
        sp -= 1
        node, lo, hi, depth = st_node[sp], st_lo[sp], st_hi[sp], st_depth[sp]
        m = 0.0
        for i in range(lo, hi):
            r = S[0, i]
            value[node, y[r]] += weight[r]
            m += weight[r]
        sq = 0.0
        for k in range(n_classes):
            sq += value[node, k] * value[node, k]
        impurity[node] = 1.0 - sq / (m * m)
        n_node[node] = m

        if (m < min_split or m < 2 * min_leaf or impurity[node] <= 0.0
                or (max_depth >= 0 and depth >= max_depth)):
            continue

        best_crit = np.inf
        best_f = -1
        best_t = 0.0
        best_cut = -1
        visited = 0
        for i in range(n_feat):
            if visited >= mtry:
                break
            j = i + np.int64(_splitmix(state) % np.uint64(n_feat - i))
            tmp = feats[i]
            feats[i] = feats[j]
            feats[j] = tmp
            f = feats[i]
            if XT[f, S[f, lo]] == XT[f, S[f, hi - 1]]:
                continue
            visited += 1
            for k in range(n_classes):
                cl[k] = 0.0
                cr[k] = value[node, k]
            sql = 0.0
            sqr = sq
            nl = 0.0
            v1 = XT[f, S[f, lo]]
            for p in range(lo, hi - 1):
                r = S[f, p]
                c = y[r]
                wr = weight[r]
                sql += wr * (2.0 * cl[c] + wr)
                cl[c] += wr
                sqr -= wr * (2.0 * cr[c] - wr)
                cr[c] -= wr
                nl += wr
                v0 = v1
                v1 = XT[f, S[f, p + 1]]
                if v0 == v1:
                    continue
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                crit = (nl - sql / nl) + (nr - sqr / nr)
                if crit > best_crit:
                    continue
                thr = 0.5 * (v0 + v1)
                if thr >= v1:
                    thr = v0
                if crit < best_crit or f < best_f or (f == best_f and thr < best_t):
                    best_crit = crit
                    best_f = f
                    best_t = thr
                    best_cut = p + 1

        if best_f < 0:
            continue
        for p in range(lo, hi):
            goes_left[S[best_f, p]] = p < best_cut
        for f in range(n_feat):
            if f == best_f:
                continue
            a = lo
            b = 0
            for p in range(lo, hi):
                r = S[f, p]
                if goes_left[r]:
                    S[f, a] = r
                    a += 1
                else:
                    tmp_r[b] = r
                    b += 1
            for q in range(b):
                S[f, a + q] = tmp_r[q]
        mid = best_cut
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = count
        right[node] = count + 1
        st_node[sp], st_lo[sp], st_hi[sp], st_depth[sp] = count + 1, mid, hi, depth + 1
        sp += 1
        st_node[sp], st_lo[sp], st_hi[sp], st_depth[sp] = count, lo, mid, depth + 1
        sp += 1
        count += 2

    return (feature[:count], threshold[:count], left[:count], right[:count],
            value[:count], impurity[:count], n_node[:count])


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


# ---------------------------------------------------------------------------
# model objects


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # per-node class frequencies (normalized)
    impurity: np.ndarray
    n_node: np.ndarray

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[_apply(X, self.feature, self.threshold, self.left, self.right)]

    def impurity_decrease(self, n_features: int) -> np.ndarray:
        out = np.zeros(n_features)
        total = self.n_node[0]
        for node in np.flatnonzero(self.feature >= 0):
            l, r = self.left[node], self.right[node]
            n_t = self.n_node[node]
            dec = (n_t * self.impurity[node] - self.n_node[l] * self.impurity[l]
                   - self.n_node[r] * self.impurity[r]) / total
            out[self.feature[node]] += dec
        return out

    def to_dict(self) -> dict:
        def node(i):
            if self.feature[i] < 0:
                return {"leaf": self.value[i].tolist(), "n": float(self.n_node[i])}
            return {"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                    "impurity": float(self.impurity[i]), "n": float(self.n_node[i]),
                    "left": node(self.left[i]), "right": node(self.right[i])}
        return node(0)

    @classmethod
    def from_dict(cls, d: dict, n_classes: int) -> Tree:
        feature, threshold, left, right, value, impurity, n_node = [], [], [], [], [], [], []

        def add(nd):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(np.zeros(n_classes))
            impurity.append(0.0)
            n_node.append(nd["n"])
            if "leaf" in nd:
                value[i] = np.asarray(nd["leaf"], dtype=float)
                impurity[i] = 1.0 - float((value[i] ** 2).sum())
            else:
                feature[i] = nd["feature"]
                threshold[i] = nd["threshold"]
                impurity[i] = nd["impurity"]
                left[i] = add(nd["left"])
                right[i] = add(nd["right"])
            return i

        add(d)
        return cls(np.array(feature, np.int64), np.array(threshold, float),
                   np.array(left, np.int64), np.array(right, np.int64),
                   np.vstack(value), np.array(impurity, float), np.array(n_node, float))


@dataclass
class Forest:
    trees: list[Tree]
    classes: np.ndarray
    n_features: int
    params: ForestParams

    @property
    def importances(self) -> np.ndarray:
        return gini_importance(self)

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]


def _check_X(X, n_features=None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-D, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionMismatch(f"expected {n_features} features, got {X.shape[1]}")
    if np.isnan(X).any():
        raise ValueError("X contains missing values; impute first")
    return X


def fit(X, y, params: ForestParams | None = None) -> Forest:
    params = params or ForestParams()
    X = _check_X(X)
    y = np.asarray(y)
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    classes, y_enc = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise SingleClass("training labels contain a single class")
    y_enc = y_enc.astype(np.int64)
    n, n_feat = X.shape
    mtry = params.mtry(n_feat)
    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    XT = np.ascontiguousarray(X.T)
    presorted = np.argsort(XT, axis=1, kind="stable")
    trees = []
    for child in np.random.SeedSequence(params.seed).spawn(params.n_trees):
        rng = np.random.default_rng(child)
        if params.bootstrap:
            weight = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
        else:
            weight = np.ones(n)
        node_seed = int(rng.integers(0, 2**63))
        f, t, l, r, v, imp, nn = _grow(XT, y_enc, len(classes), presorted, weight,
                                       max_depth, params.min_samples_split,
                                       params.min_samples_leaf, mtry, node_seed)
        v = v / v.sum(axis=1, keepdims=True)
        trees.append(Tree(f, t, l, r, v, imp, nn))
    return Forest(trees, classes, n_feat, params)


def predict_proba(forest: Forest, X) -> np.ndarray:
    X = _check_X(X, forest.n_features)
    out = np.zeros((X.shape[0], len(forest.classes)))
    for tree in forest.trees:
        out += tree.predict_proba(X)
    return out / len(forest.trees)


def gini_importance(forest: Forest) -> np.ndarray:
    total = np.zeros(forest.n_features)
    for tree in forest.trees:
        total += tree.impurity_decrease(forest.n_features)
    s = total.sum()
    return total / s if s > 0 else total


# ---------------------------------------------------------------------------
# serialization


def forest_to_json(forest: Forest, feature_names=None) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "params": asdict(forest.params),
        "classes": forest.classes.tolist(),
        "n_features": forest.n_features,
        "feature_names": list(feature_names) if feature_names is not None else None,
        "trees": [t.to_dict() for t in forest.trees],
    }


def forest_from_json(d: dict) -> Forest:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {d.get('format_version')!r}")
    classes = np.asarray(d["classes"])
    trees = [Tree.from_dict(t, len(classes)) for t in d["trees"]]
    return Forest(trees, classes, int(d["n_features"]), ForestParams(**d["params"]))


def save_forest(forest: Forest, path: str | Path, feature_names=None) -> None:
    Path(path).write_text(json.dumps(forest_to_json(forest, feature_names)), encoding="utf-8")


def load_forest(path: str | Path) -> Forest:
    return forest_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
