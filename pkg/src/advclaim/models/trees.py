"""Second-order gradient-boosted trees for logistic loss.

Each tree is fit to the per-sample gradient ``g = p - y`` and hessian
``h = p (1 - p)`` of the logistic loss at the current ensemble margin. A leaf
holding samples ``I`` gets weight ``-sum(g_I) / (sum(h_I) + lambda)``, and a
split is scored by the usual structure-score gain

    0.5 * (G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam))

Two growth policies are supported: ``level_wise`` expands every leaf of the
shallowest depth before moving deeper, ``leaf_wise`` always expands the leaf
with the largest gain. Both stop at ``max_leaves``.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from ..numkit import sigmoid
from .base import Classifier, check_binary_train

GROWTH = ("level_wise", "leaf_wise")


@dataclass
class Tree:
    """Array-backed binary tree; ``feature == -1`` marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row (``x[:, f] < threshold`` goes left)."""
        node = np.zeros(x.shape[0], dtype=np.int64)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        active = feature[node] >= 0
        while np.any(active):
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = x[rows, feature[nd]] < threshold[nd]
            node[rows] = np.where(go_left, left[nd], right[nd])
            active = feature[node] >= 0
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.value)[self.apply(x)]

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}


@dataclass
class _Split:
    gain: float
    feature: int
    threshold: float
    left_rows: np.ndarray
    right_rows: np.ndarray


def _leaf_weight(g: float, h: float, lam: float) -> float:
    return -g / (h + lam) if h + lam > 0 else 0.0


def _score(g, h, lam):
    denom = h + lam
    return np.divide(g * g, denom, out=np.zeros_like(np.asarray(g, dtype=float)), where=denom > 0)


class _SplitFinder:
    """Exact search over sorted unique values, or over fixed histogram bin edges."""

    def __init__(self, x, lam, min_child_weight, histogram_bins=None):
        self.x = x
        self.lam = lam
        self.mcw = min_child_weight
        self.bins = None
        if histogram_bins:
            self.edges = []
            self.bins = np.zeros(x.shape, dtype=np.int64)
            for j in range(x.shape[1]):
                qs = np.unique(np.quantile(x[:, j], np.linspace(0, 1, histogram_bins + 1)[1:-1]))
                # a value equal to an edge falls right of it, matching the `<` rule
                self.bins[:, j] = np.searchsorted(qs, x[:, j], side="right")
                self.edges.append(qs)

    def best(self, rows, g, h) -> _Split | None:
        G, Hs = g[rows].sum(), h[rows].sum()
        parent = float(_score(np.array(G), np.array(Hs), self.lam))
        best = None
        for j in range(self.x.shape[1]):
            if self.bins is None:
                cand = self._exact(rows, j, g, h)
            else:
                cand = self._hist(rows, j, g, h)
            if cand is None:
                continue
            gl, hl, thr = cand
            gr, hr = G - gl, Hs - hl
            ok = (hl >= self.mcw) & (hr >= self.mcw)
            if not np.any(ok):
                continue
            gain = 0.5 * (_score(gl, hl, self.lam) + _score(gr, hr, self.lam) - parent)
            gain = np.where(ok, gain, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > 0 and (best is None or gain[k] > best[0]):
                best = (float(gain[k]), j, float(thr[k]))
        if best is None:
            return None
        gain, j, thr = best
        go_left = self.x[rows, j] < thr
        return _Split(gain, j, thr, rows[go_left], rows[~go_left])

    def _exact(self, rows, j, g, h):
        v = self.x[rows, j]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        cg = np.cumsum(g[rows][order])
        ch = np.cumsum(h[rows][order])
        cut = np.flatnonzero(vs[1:] > vs[:-1])
        if cut.size == 0:
            return None
        return cg[cut], ch[cut], 0.5 * (vs[cut] + vs[cut + 1])

    def _hist(self, rows, j, g, h):
        edges = self.edges[j]
        if edges.size == 0:
            return None
        b = self.bins[rows, j]
        nb = edges.size + 1
        gb = np.bincount(b, weights=g[rows], minlength=nb)
        hb = np.bincount(b, weights=h[rows], minlength=nb)
        present = np.bincount(b, minlength=nb) > 0
        # candidate k splits bins [0..k] | [k+1..]; skip cuts with an empty side
        cg, ch = np.cumsum(gb)[:-1], np.cumsum(hb)[:-1]
        cnt = np.cumsum(present)[:-1]
        valid = (cnt > 0) & (cnt < present.sum())
        if not np.any(valid):
            return None
        return cg[valid], ch[valid], edges[valid]


def grow_tree(x, g, h, max_leaves=8, lambda_reg=1.0, growth="level_wise", min_child_weight=1.0,
              max_depth=None, histogram_bins=None) -> Tree:
    """Grow one regression tree on (g, h) statistics."""
    if growth not in GROWTH:
        raise ValueError(f"growth must be one of {GROWTH}, got {growth!r}")
    if max_leaves < 2:
        raise ValueError("max_leaves must be at least 2")
    finder = _SplitFinder(x, lambda_reg, min_child_weight, histogram_bins)
    tree = Tree()
    rows0 = np.arange(x.shape[0])
    root = tree.add_leaf(_leaf_weight(g.sum(), h.sum(), lambda_reg))
    leaves = 1
    counter = 0  # heap tie-breaker keeps expansion order deterministic

    def candidate(node, rows, depth):
        if max_depth is not None and depth >= max_depth:
            return None
        return finder.best(rows, g, h)

    def expand(node, split):
        left = tree.add_leaf(_leaf_weight(g[split.left_rows].sum(), h[split.left_rows].sum(), lambda_reg))
        right = tree.add_leaf(_leaf_weight(g[split.right_rows].sum(), h[split.right_rows].sum(), lambda_reg))
        tree.feature[node] = split.feature
        tree.threshold[node] = split.threshold
        tree.left[node], tree.right[node] = left, right
        tree.value[node] = 0.0
        return left, right

    if growth == "leaf_wise":
        heap = []
        s = candidate(root, rows0, 0)
        if s is not None:
            heap.append((-s.gain, counter, root, s, 0))
        while heap and leaves < max_leaves:
            _, _, node, s, depth = heapq.heappop(heap)
            left, right = expand(node, s)
            leaves += 1
            for child, rows in ((left, s.left_rows), (right, s.right_rows)):
                cs = candidate(child, rows, depth + 1)
                if cs is not None:
                    counter += 1
                    heapq.heappush(heap, (-cs.gain, counter, child, cs, depth + 1))
    else:
        frontier = [(root, rows0)]
        depth = 0
        while frontier and leaves < max_leaves:
            nxt = []
            for node, rows in frontier:
                if leaves >= max_leaves:
                    break
                s = candidate(node, rows, depth)
                if s is None:
                    continue
                left, right = expand(node, s)
                leaves += 1
                nxt += [(left, s.left_rows), (right, s.right_rows)]
            frontier = nxt
            depth += 1
    return tree


class TreeEnsemble(Classifier):
    family = "gbt"

    def __init__(self, n_features: int, trees=None, shrinkage: float = 0.1, lambda_reg: float = 1.0,
                 growth: str = "level_wise", base_score: float = 0.0, **extra):
        self.n_features = n_features
        self.trees: list[Tree] = list(trees or [])
        self.shrinkage = shrinkage
        self.lambda_reg = lambda_reg
        self.growth = growth
        self.base_score = base_score
        self.extra = extra

    def margin(self, x) -> np.ndarray:
        x = self._check(x)
        out = np.full(x.shape[0], self.base_score)
        for t in self.trees:
            out += self.shrinkage * t.predict(x)
        return out

    def _proba(self, x):
        return sigmoid(self.margin(x))

    def thresholds(self) -> dict[int, list[float]]:
        """All split thresholds per feature (the score is constant between them)."""
        out: dict[int, list[float]] = {}
        for t in self.trees:
            for f, thr in zip(t.feature, t.threshold):
                if f >= 0:
                    out.setdefault(f, []).append(thr)
        return out

    def hyperparameters(self) -> dict:
        return {"n_features": self.n_features, "shrinkage": self.shrinkage, "lambda_reg": self.lambda_reg,
                "growth": self.growth, "base_score": self.base_score, "n_trees": len(self.trees), **self.extra}

    def parameters_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_parts(cls, hyper: dict, params: dict) -> "TreeEnsemble":
        hyper = dict(hyper)
        hyper.pop("n_trees", None)
        trees = [Tree(**t) for t in params["trees"]]
        return cls(trees=trees, **hyper)


def train_gbt(x, y, n_trees: int = 100, max_leaves: int = 8, lambda_reg: float = 1.0, shrinkage: float = 0.1,
              growth: str = "level_wise", min_child_weight: float = 1.0, max_depth: int | None = None,
              histogram_bins: int | None = None, base_score: float = 0.0) -> TreeEnsemble:
    """Boost ``n_trees`` trees on the logistic loss starting from ``base_score``."""
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    check_binary_train(y)
    model = TreeEnsemble(x.shape[1], shrinkage=shrinkage, lambda_reg=lambda_reg, growth=growth,
                         base_score=base_score, max_leaves=max_leaves, min_child_weight=min_child_weight,
                         max_depth=max_depth, histogram_bins=histogram_bins)
    margin = np.full(y.size, base_score)
    for _ in range(n_trees):
        p = sigmoid(margin)
        g, h = p - y, p * (1.0 - p)
        tree = grow_tree(x, g, h, max_leaves, lambda_reg, growth, min_child_weight, max_depth, histogram_bins)
        model.trees.append(tree)
        margin += shrinkage * tree.predict(x)
    return model
