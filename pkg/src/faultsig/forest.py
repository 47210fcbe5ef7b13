"""Bagged (and optionally boosted) decision-tree ensembles.

Trees use axis-aligned midpoint-threshold splits chosen by weighted
Gini impurity, grown best-first until a split budget is exhausted.
All randomness derives from per-tree seeds, so a fitted forest is a
pure function of (data, hyperparameters, seed).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import jsonio


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_splits: int = 32
    min_leaf: int = 3
    method: str = "bagging"            # or "boosting"
    feature_fraction: str = "sqrt"     # per-split subsampling rule for bagging

    def validate(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_splits < 1:
            raise ValueError("max_splits must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.method not in ("bagging", "boosting"):
            raise ValueError(f"unknown ensemble method {self.method!r}")


def _weighted_gini(w0: float, w1: float) -> float:
    total = w0 + w1
    if total <= 0:
        return 0.0
    p0 = w0 / total
    p1 = w1 / total
    return 1.0 - (p0 * p0 + p1 * p1)


def _best_split_node(values, labels, weights, counts_ok_min):
    """Best midpoint split of one feature column within a node.

    Returns (impurity_decrease, threshold) or None if no legal split.
    Tie-breaks toward the smallest threshold (first scan hit).
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    y = labels[order]
    w = weights[order]
    n = v.size
    if n < 2 * counts_ok_min:
        return None
    w1 = np.cumsum(w * y)
    wa = np.cumsum(w)
    total_w = wa[-1]
    total_w1 = w1[-1]
    total_w0 = total_w - total_w1
    parent = _weighted_gini(total_w0, total_w1) * total_w
    k = np.arange(1, n)
    valid = (v[1:] > v[:-1]) & (k >= counts_ok_min) & (n - k >= counts_ok_min)
    if not valid.any():
        return None
    wl = wa[:-1][valid]
    wl1 = w1[:-1][valid]
    wl0 = wl - wl1
    wr = total_w - wl
    wr1 = total_w1 - wl1
    wr0 = total_w0 - wl0
    with np.errstate(invalid="ignore", divide="ignore"):
        gl = 1.0 - ((wl0 / wl) ** 2 + (wl1 / wl) ** 2)
        gr = 1.0 - ((wr0 / wr) ** 2 + (wr1 / wr) ** 2)
    child = wl * gl + wr * gr
    decrease = parent - child
    best = int(np.argmax(decrease))           # first hit wins ties
    if decrease[best] <= 1e-15:
        return None
    pos = k[valid][best]
    threshold = 0.5 * (v[pos - 1] + v[pos])
    return float(decrease[best]), threshold


class _Tree:
    """Flat-array decision tree; nodes reference children by index."""

    __slots__ = ("feature", "threshold", "left", "right", "counts")

    def __init__(self):
        self.feature: list = []
        self.threshold: list = []
        self.left: list = []
        self.right: list = []
        self.counts: list = []

    def _add_leaf(self, counts) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.counts.append([float(counts[0]), float(counts[1])])
        return len(self.feature) - 1

    def fit(self, X, y, weights, rng, params: ForestParams, n_candidates: int):
        n_rows, n_features = X.shape
        root_rows = np.arange(n_rows)
        w0 = float(weights[y == 0].sum())
        w1 = float(weights[y == 1].sum())
        root = self._add_leaf((w0, w1))
        counter = 0
        heap = []

        def propose(node_id, rows):
            nonlocal counter
            if rows.size < 2 * params.min_leaf:
                return
            if n_candidates >= n_features:
                feats = np.arange(n_features)
            else:
                feats = np.sort(rng.choice(n_features, size=n_candidates, replace=False))
            best = None
            for f in feats:
                res = _best_split_node(X[rows, f], y[rows], weights[rows],
                                       params.min_leaf)
                if res is None:
                    continue
                gain, thr = res
                if best is None or gain > best[0]:
                    best = (gain, int(f), thr)
            if best is not None:
                counter += 1
                heapq.heappush(heap, (-best[0], counter, node_id, best[1], best[2], rows))

        propose(root, root_rows)
        splits = 0
        while heap and splits < params.max_splits:
            _, _, node_id, f, thr, rows = heapq.heappop(heap)
            go_left = X[rows, f] <= thr
            left_rows = rows[go_left]
            right_rows = rows[~go_left]
            lc = (float(weights[left_rows[y[left_rows] == 0]].sum()),
                  float(weights[left_rows[y[left_rows] == 1]].sum()))
            rc = (float(weights[right_rows[y[right_rows] == 0]].sum()),
                  float(weights[right_rows[y[right_rows] == 1]].sum()))
            left_id = self._add_leaf(lc)
            right_id = self._add_leaf(rc)
            self.feature[node_id] = int(f)
            self.threshold[node_id] = float(thr)
            self.left[node_id] = left_id
            self.right[node_id] = right_id
            splits += 1
            propose(left_id, left_rows)
            propose(right_id, right_rows)
        return self

    def predict(self, X) -> np.ndarray:
        n = X.shape[0]
        out = np.zeros(n, dtype=np.int64)
        node_of = np.zeros(n, dtype=np.int64)
        active = np.arange(n)
        while active.size:
            nodes = node_of[active]
            feats = np.array(self.feature)[nodes]
            leaf_mask = feats < 0
            leaves = active[leaf_mask]
            if leaves.size:
                counts = np.array(self.counts)[node_of[leaves]]
                out[leaves] = (counts[:, 1] > counts[:, 0]).astype(np.int64)
            rest = active[~leaf_mask]
            if rest.size:
                nid = node_of[rest]
                f = np.array(self.feature)[nid]
                thr = np.array(self.threshold)[nid]
                go_left = X[rest, f] <= thr
                node_of[rest] = np.where(go_left,
                                         np.array(self.left)[nid],
                                         np.array(self.right)[nid])
            active = rest
        return out

    def to_payload(self) -> dict:
        return {"feature": list(self.feature),
                "threshold": [float(t) for t in self.threshold],
                "left": list(self.left), "right": list(self.right),
                "counts": [list(c) for c in self.counts]}


@dataclass
class ForestModel:
    trees: list
    params: ForestParams
    seed: int
    alphas: np.ndarray | None = None   # boosting stage weights
    classes: tuple = (0, 1)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        votes = np.zeros((X.shape[0], 2))
        if self.params.method == "boosting":
            for tree, alpha in zip(self.trees, self.alphas):
                pred = tree.predict(X)
                votes[np.arange(X.shape[0]), pred] += alpha
        else:
            for tree in self.trees:
                pred = tree.predict(X)
                votes[np.arange(X.shape[0]), pred] += 1.0
        # ties resolve to class 0 deterministically
        return (votes[:, 1] > votes[:, 0]).astype(np.int64)

    def to_payload(self) -> dict:
        return {
            "method": self.params.method,
            "n_trees": self.params.n_trees,
            "max_splits": self.params.max_splits,
            "min_leaf": self.params.min_leaf,
            "seed": int(self.seed),
            "alphas": None if self.alphas is None else [float(a) for a in self.alphas],
            "trees": [t.to_payload() for t in self.trees],
        }

    def save(self, path) -> None:
        jsonio.dump(self.to_payload(), path)


def _candidate_count(params: ForestParams, n_features: int) -> int:
    if params.feature_fraction == "sqrt":
        return max(1, int(math.sqrt(n_features) + 0.5))
    return n_features


def train_forest(X, y, params: ForestParams | None = None, seed: int = 0) -> ForestModel:
    """Fit a seeded tree ensemble on a binary problem."""
    params = params or ForestParams()
    params.validate()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise ValueError(f"{y.shape} labels for {X.shape[0]} rows")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("training data contains a single class")
    if not np.all(np.isin(classes, (0, 1))):
        raise ValueError("labels must be 0/1")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")

    m = X.shape[0]
    ss = np.random.SeedSequence((int(seed), 0xF0BE57))
    children = ss.spawn(params.n_trees)
    trees = []
    if params.method == "bagging":
        n_cand = _candidate_count(params, X.shape[1])
        for child in children:
            rng = np.random.Generator(np.random.PCG64(child))
            draw = rng.integers(0, m, size=m)
            weights = np.bincount(draw, minlength=m).astype(np.float64)
            rows = np.flatnonzero(weights)
            tree = _Tree().fit(X[rows], y[rows], weights[rows], rng, params,
                               n_cand)
            trees.append(tree)
        return ForestModel(trees=trees, params=params, seed=int(seed))

    # boosting: SAMME with stagewise reweighting, all features per split
    weights = np.full(m, 1.0 / m)
    alphas = []
    for child in children:
        rng = np.random.Generator(np.random.PCG64(child))
        tree = _Tree().fit(X, y, weights, rng, params, X.shape[1])
        pred = tree.predict(X)
        err = float(weights[pred != y].sum() / weights.sum())
        err = min(max(err, 1e-10), 1.0 - 1e-10)
        alpha = math.log((1.0 - err) / err)
        trees.append(tree)
        alphas.append(alpha)
        weights = weights * np.exp(alpha * (pred != y))
        weights /= weights.sum()
    return ForestModel(trees=trees, params=params, seed=int(seed),
                       alphas=np.array(alphas))
