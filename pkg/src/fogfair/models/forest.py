"""Random forest of Gini decision trees (the shallow FOG detector)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch, SingleClassTraining


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_features: int | None = None  # None -> ceil(sqrt(d))
    max_depth: int | None = None
    min_samples_leaf: int = 1
    rng_seed: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class Tree:
    """Flat array representation; leaves have ``feature == -1``.

    A sample goes left when ``x[feature] <= threshold``; thresholds are training
    values (never midpoints), so predictions only depend on feature order.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # fraction of FOG samples in the leaf

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] >= 0
        return self.value[node]

    def votes(self, X: np.ndarray) -> np.ndarray:
        return (self.leaf_values(X) > 0.5).astype(np.float64)


def _best_split(X, y, feats, min_leaf):
    """Best Gini split over ``feats``; returns ``(gain, feature, threshold)`` or None."""
    n = y.shape[0]
    sub = X[:, feats]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    ys = y[order]
    pos_left = np.cumsum(ys, axis=0)[:-1]  # left = first i+1 samples
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    pos_total = ys.sum(axis=0)
    pos_right = pos_total - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    # weighted Gini of children, times n
    impurity = n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)
    valid = xs[:-1] < xs[1:]
    if min_leaf > 1:
        valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    flat = int(np.argmin(impurity))  # row-major: ties go to the lowest position, then feature
    i, j = divmod(flat, len(feats))
    p = pos_total[j] / n
    gain = n * 2 * p * (1 - p) - impurity[i, j]
    return gain, int(feats[j]), float(xs[i, j])


def build_tree(X, y, max_features, rng, max_depth=None, min_leaf=1) -> Tree:
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        value[node] = float(yn.mean())
        if yn.min() == yn.max() or (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
            continue
        perm = rng.permutation(d)
        split = None
        # like common implementations, keep drawing features while none of them splits
        for start in range(0, d, max_features):
            split = _best_split(X[idx], yn, perm[start : start + max_features], min_leaf)
            if split is not None:
                break
        if split is None:
            continue
        _, f, t = split
        mask = X[idx, f] <= t
        l, r = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, t, l, r
        stack.append((r, idx[~mask], depth + 1))
        stack.append((l, idx[mask], depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
    )


@dataclass
class ForestModel:
    trees: list[Tree]
    n_features: int
    config: ForestConfig
    oob_scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_trees(self):
        return len(self.trees)

    @property
    def max_features(self):
        return resolve_max_features(self.config, self.n_features)

    @property
    def rng_seed(self):
        return self.config.rng_seed

    def predict_scores(self, X) -> np.ndarray:
        """Fraction of trees voting FOG."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected [n, {self.n_features}] features, got {X.shape}")
        votes = np.zeros(X.shape[0])
        for t in self.trees:
            votes += t.votes(X)
        return votes / len(self.trees)


def resolve_max_features(cfg: ForestConfig, d: int) -> int:
    m = cfg.max_features if cfg.max_features else math.ceil(math.sqrt(d))
    return max(1, min(d, m))


def train_forest(features, labels, cfg: ForestConfig | None = None) -> ForestModel:
    """Fit ``cfg.n_trees`` bootstrapped trees; deterministic in ``cfg.rng_seed``.

    Out-of-bag scores (vote fraction over trees that did not see a sample) are
    kept on the model for honest calibration on the training split; samples
    that were in every bootstrap get their in-bag score.
    """
    cfg = cfg or ForestConfig()
    X = np.asarray([getattr(f, "values", f) for f in features], dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch("features and labels disagree in length")
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise SingleClassTraining("need at least two samples from both classes")
    n, d = X.shape
    m = resolve_max_features(cfg, d)
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_trees)
    trees = []
    oob_votes = np.zeros(n)
    oob_counts = np.zeros(n)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, size=n)
        tree = build_tree(X[boot], y[boot], m, rng, cfg.max_depth, cfg.min_samples_leaf)
        trees.append(tree)
        out = np.ones(n, dtype=bool)
        out[boot] = False
        if out.any():
            oob_votes[out] += tree.votes(X[out])
            oob_counts[out] += 1
    model = ForestModel(trees, d, cfg)
    in_bag = model.predict_scores(X)
    model.oob_scores = np.where(oob_counts > 0, oob_votes / np.maximum(oob_counts, 1), in_bag)
    return model
