"""Stage classifiers: k-NN, Gaussian naive Bayes, a gain-ratio decision
tree, a random forest, and SVMs trained by sequential minimal optimization
with linear and quadratic kernels.

Common contract: fit(X, y, seed) learns from an (n, m) float matrix and a
label list, predict_scores returns an (n, n_classes) row-stochastic matrix
over `classes_` (ordered by stage order when the labels are stages, else
lexically), and ties on the top score resolve toward the earlier class.
Fitting is deterministic given (X, y, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import STAGE_INDEX
from .errors import DataFormatError, InvariantError

CLASSIFIER_KINDS = (
    "knn",
    "naive_bayes",
    "decision_tree",
    "random_forest",
    "svm_linear",
    "svm_quadratic",
)

VARIANCE_FLOOR = 1e-9


def label_order(labels) -> tuple[str, ...]:
    uniq = sorted(set(labels))
    if all(s in STAGE_INDEX for s in uniq):
        uniq.sort(key=lambda s: STAGE_INDEX[s])
    return tuple(uniq)


def _check_xy(X, y) -> tuple[np.ndarray, list]:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataFormatError(f"feature matrix must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataFormatError("feature matrix contains non-finite values")
    y = list(y)
    if len(y) != len(X):
        raise DataFormatError(f"{len(X)} rows but {len(y)} labels")
    if len(y) == 0:
        raise DataFormatError("cannot fit on an empty training set")
    return X, y


class _BaseClassifier:
    kind = "base"

    def __init__(self):
        self.classes_: tuple[str, ...] = ()

    def fit(self, X, y, seed: int = 0):
        raise NotImplementedError

    def predict_scores(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> list[str]:
        scores = self.predict_scores(X)
        return [self.classes_[i] for i in np.argmax(scores, axis=1)]

    def _encode(self, y) -> np.ndarray:
        self.classes_ = label_order(y)
        pos = {c: i for i, c in enumerate(self.classes_)}
        return np.array([pos[c] for c in y], dtype=np.int64)


class KNNClassifier(_BaseClassifier):
    """1..k nearest neighbours by raw Euclidean distance. When k is not
    given it is chosen from 1..min(50, n-1) by stratified 10-fold CV
    accuracy, smaller k winning ties."""

    kind = "knn"

    def __init__(self, k: int | None = None):
        super().__init__()
        self.k = k

    def fit(self, X, y, seed: int = 0):
        from .evalkit import stratified_kfold

        X, y = _check_xy(X, y)
        codes = self._encode(y)
        self._X = X
        self._y = codes
        n = len(X)
        if self.k is not None:
            if not (1 <= self.k <= n):
                raise InvariantError(f"k={self.k} outside 1..{n}")
            self.k_ = int(self.k)
            return self
        if n == 1:
            self.k_ = 1
            return self
        ks = list(range(1, min(50, n - 1) + 1))
        folds = stratified_kfold(y, min(10, n), seed)
        correct = np.zeros(len(ks), dtype=np.int64)
        for fold in folds:
            fold = np.asarray(sorted(fold), dtype=int)
            mask = np.ones(n, dtype=bool)
            mask[fold] = False
            train_idx = np.where(mask)[0]
            if len(train_idx) == 0:
                continue
            d = _sq_distances(X[fold], X[train_idx])
            order = np.argsort(d, axis=1, kind="stable")
            lab = self._y[train_idx]
            for ki, k in enumerate(ks):
                kk = min(k, len(train_idx))
                votes = lab[order[:, :kk]]
                for row, t in zip(votes, fold):
                    counts = np.bincount(row, minlength=len(self.classes_))
                    if int(np.argmax(counts)) == self._y[t]:
                        correct[ki] += 1
        self.k_ = ks[int(np.argmax(correct))]
        return self

    def predict_scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        d = _sq_distances(X, self._X)
        order = np.argsort(d, axis=1, kind="stable")[:, : self.k_]
        out = np.zeros((len(X), len(self.classes_)))
        for i, row in enumerate(order):
            counts = np.bincount(self._y[row], minlength=len(self.classes_))
            out[i] = counts / self.k_
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "classes": list(self.classes_),
            "k": int(self.k_),
            "X": self._X.tolist(),
            "y": self._y.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict):
        self = cls(k=obj["k"])
        self.classes_ = tuple(obj["classes"])
        self._X = np.asarray(obj["X"], dtype=float)
        self._y = np.asarray(obj["y"], dtype=np.int64)
        self.k_ = int(obj["k"])
        return self


def _sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = np.sum(A * A, axis=1)[:, None]
    bb = np.sum(B * B, axis=1)[None, :]
    d = aa + bb - 2.0 * (A @ B.T)
    np.maximum(d, 0.0, out=d)
    return d


class NaiveBayesClassifier(_BaseClassifier):
    """Gaussian class-conditionals with a variance floor of 1e-9."""

    kind = "naive_bayes"

    def fit(self, X, y, seed: int = 0):
        X, y = _check_xy(X, y)
        codes = self._encode(y)
        c = len(self.classes_)
        m = X.shape[1]
        self.means_ = np.zeros((c, m))
        self.vars_ = np.zeros((c, m))
        self.log_priors_ = np.zeros(c)
        for ci in range(c):
            rows = X[codes == ci]
            self.means_[ci] = rows.mean(axis=0)
            self.vars_[ci] = np.maximum(rows.var(axis=0), VARIANCE_FLOOR)
            self.log_priors_[ci] = math.log(len(rows) / len(X))
        return self

    def predict_scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        ll = np.zeros((len(X), len(self.classes_)))
        for ci in range(len(self.classes_)):
            z = (X - self.means_[ci]) ** 2 / self.vars_[ci]
            ll[:, ci] = self.log_priors_[ci] - 0.5 * np.sum(
                z + np.log(2.0 * np.pi * self.vars_[ci]), axis=1
            )
        ll -= ll.max(axis=1, keepdims=True)
        p = np.exp(ll)
        return p / p.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "classes": list(self.classes_),
            "means": self.means_.tolist(),
            "vars": self.vars_.tolist(),
            "log_priors": self.log_priors_.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict):
        self = cls()
        self.classes_ = tuple(obj["classes"])
        self.means_ = np.asarray(obj["means"], dtype=float)
        self.vars_ = np.asarray(obj["vars"], dtype=float)
        self.log_priors_ = np.asarray(obj["log_priors"], dtype=float)
        return self


@dataclass
class _TreeNode:
    dist: np.ndarray
    feature: int = -1
    threshold: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"dist": self.dist.tolist()}
        return {
            "dist": self.dist.tolist(),
            "feature": int(self.feature),
            "threshold": float(self.threshold),
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict):
        node = cls(dist=np.asarray(obj["dist"], dtype=float))
        if "feature" in obj:
            node.feature = int(obj["feature"])
            node.threshold = float(obj["threshold"])
            node.left = cls.from_dict(obj["left"])
            node.right = cls.from_dict(obj["right"])
        return node


def _entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


def _best_split(X, codes, n_classes, feat_ids, min_leaf, use_gain_ratio):
    """Best (score, feature, threshold) over the given features; None when
    no admissible split improves on the parent. First feature and smaller
    threshold win exact ties."""
    n = len(codes)
    parent = np.bincount(codes, minlength=n_classes)
    h_parent = _entropy_bits(parent)
    best = None
    for f in feat_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = codes[order]
        left = np.zeros(n_classes, dtype=np.int64)
        for i in range(n - 1):
            left[ys[i]] += 1
            if xs[i + 1] == xs[i]:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            right = parent - left
            gain = h_parent - (nl / n) * _entropy_bits(left) - (nr / n) * _entropy_bits(right)
            if use_gain_ratio:
                split_info = _entropy_bits(np.array([nl, nr]))
                if split_info <= 0.0:
                    continue
                score = gain / split_info
            else:
                score = gain
            if gain <= 1e-12:
                continue
            if best is None or score > best[0]:
                best = (score, f, 0.5 * (float(xs[i]) + float(xs[i + 1])))
    return best


def _grow_tree(X, codes, n_classes, min_leaf, max_depth, use_gain_ratio, rng, n_sub, depth=0):
    counts = np.bincount(codes, minlength=n_classes)
    node = _TreeNode(dist=counts / counts.sum())
    if counts.max() == counts.sum() or (max_depth is not None and depth >= max_depth):
        return node
    m = X.shape[1]
    if n_sub is not None and n_sub < m:
        feat_ids = np.sort(rng.choice(m, size=n_sub, replace=False))
    else:
        feat_ids = np.arange(m)
    best = _best_split(X, codes, n_classes, feat_ids, min_leaf, use_gain_ratio)
    if best is None:
        return node
    _, f, thr = best
    mask = X[:, f] <= thr
    node.feature = f
    node.threshold = thr
    node.left = _grow_tree(
        X[mask], codes[mask], n_classes, min_leaf, max_depth, use_gain_ratio, rng, n_sub, depth + 1
    )
    node.right = _grow_tree(
        X[~mask], codes[~mask], n_classes, min_leaf, max_depth, use_gain_ratio, rng, n_sub, depth + 1
    )
    return node


def _tree_scores(node: _TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.zeros((len(X), len(node.dist)))
    for i, row in enumerate(X):
        cur = node
        while not cur.is_leaf:
            cur = cur.left if row[cur.feature] <= cur.threshold else cur.right
        out[i] = cur.dist
    return out


class DecisionTreeClassifier(_BaseClassifier):
    """Greedy binary splits on midpoint thresholds scored by gain ratio
    (information gain normalized by split entropy), grown without pruning.
    min_leaf=2 mirrors the usual C4.5 minimum; set 1 to allow full purity."""

    kind = "decision_tree"

    def __init__(self, min_leaf: int = 2, max_depth: int | None = None):
        super().__init__()
        if min_leaf < 1:
            raise InvariantError("min_leaf must be at least 1")
        self.min_leaf = min_leaf
        self.max_depth = max_depth

    def fit(self, X, y, seed: int = 0):
        X, y = _check_xy(X, y)
        codes = self._encode(y)
        self.root_ = _grow_tree(
            X, codes, len(self.classes_), self.min_leaf, self.max_depth, True, None, None
        )
        return self

    def predict_scores(self, X) -> np.ndarray:
        return _tree_scores(self.root_, np.asarray(X, dtype=float))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "classes": list(self.classes_),
            "min_leaf": self.min_leaf,
            "max_depth": self.max_depth,
            "root": self.root_.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict):
        self = cls(min_leaf=obj["min_leaf"], max_depth=obj["max_depth"])
        self.classes_ = tuple(obj["classes"])
        self.root_ = _TreeNode.from_dict(obj["root"])
        return self


class RandomForestClassifier(_BaseClassifier):
    """Bagged information-gain trees, ceil(sqrt(m)) candidate features per
    node, tree t seeded with seed + t. Scores average the leaf
    distributions."""

    kind = "random_forest"

    def __init__(self, n_trees: int = 100, min_leaf: int = 1, max_depth: int | None = None):
        super().__init__()
        if n_trees < 1:
            raise InvariantError("n_trees must be positive")
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.max_depth = max_depth

    def fit(self, X, y, seed: int = 0):
        X, y = _check_xy(X, y)
        codes = self._encode(y)
        n, m = X.shape
        n_sub = int(math.ceil(math.sqrt(m)))
        self.trees_ = []
        for t in range(self.n_trees):
            rng = np.random.default_rng(seed + t)
            boot = rng.integers(0, n, size=n)
            self.trees_.append(
                _grow_tree(
                    X[boot],
                    codes[boot],
                    len(self.classes_),
                    self.min_leaf,
                    self.max_depth,
                    False,
                    rng,
                    n_sub,
                )
            )
        return self

    def predict_scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        acc = np.zeros((len(X), len(self.classes_)))
        for tree in self.trees_:
            acc += _tree_scores(tree, X)
        return acc / len(self.trees_)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "classes": list(self.classes_),
            "n_trees": self.n_trees,
            "min_leaf": self.min_leaf,
            "max_depth": self.max_depth,
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, obj: dict):
        self = cls(n_trees=obj["n_trees"], min_leaf=obj["min_leaf"], max_depth=obj["max_depth"])
        self.classes_ = tuple(obj["classes"])
        self.trees_ = [_TreeNode.from_dict(t) for t in obj["trees"]]
        return self


def _smo_binary(K, y, C, tol, max_passes, rng, max_sweeps=500):
    """Simplified sequential minimal optimization on a precomputed kernel.
    Returns (alpha, b). y must be +/-1."""
    n = len(y)
    alpha = np.zeros(n)
    b = 0.0
    passes = 0
    sweeps = 0
    ay = alpha * y
    while passes < max_passes and sweeps < max_sweeps:
        changed = 0
        for i in range(n):
            ei = float(ay @ K[:, i]) + b - y[i]
            if (y[i] * ei < -tol and alpha[i] < C) or (y[i] * ei > tol and alpha[i] > 0.0):
                j = int(rng.integers(n - 1))
                if j >= i:
                    j += 1
                ej = float(ay @ K[:, j]) + b - y[j]
                ai_old, aj_old = alpha[i], alpha[j]
                if y[i] != y[j]:
                    lo = max(0.0, aj_old - ai_old)
                    hi = min(C, C + aj_old - ai_old)
                else:
                    lo = max(0.0, ai_old + aj_old - C)
                    hi = min(C, ai_old + aj_old)
                if lo == hi:
                    continue
                eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
                if eta >= 0.0:
                    continue
                aj = aj_old - y[j] * (ei - ej) / eta
                aj = min(hi, max(lo, aj))
                if abs(aj - aj_old) < 1e-5:
                    continue
                ai = ai_old + y[i] * y[j] * (aj_old - aj)
                alpha[i], alpha[j] = ai, aj
                ay[i], ay[j] = ai * y[i], aj * y[j]
                b1 = b - ei - y[i] * (ai - ai_old) * K[i, i] - y[j] * (aj - aj_old) * K[i, j]
                b2 = b - ej - y[i] * (ai - ai_old) * K[i, j] - y[j] * (aj - aj_old) * K[j, j]
                if 0.0 < ai < C:
                    b = b1
                elif 0.0 < aj < C:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                changed += 1
        sweeps += 1
        passes = passes + 1 if changed == 0 else 0
    return alpha, b


@dataclass
class _BinarySVM:
    pos_class: int
    neg_class: int
    sv_x: np.ndarray
    sv_coef: np.ndarray  # alpha_i * y_i for the support vectors
    b: float
    alpha: np.ndarray = field(default=None, repr=False)
    y: np.ndarray = field(default=None, repr=False)


class SVMClassifier(_BaseClassifier):
    """One-vs-one SVM trained by simplified SMO on internally standardized
    features. kernel 'linear' is x.y, 'quadratic' is (x.y + 1)^2."""

    kind = "svm_linear"

    def __init__(self, kernel: str = "linear", C: float = 1.0, tol: float = 1e-3,
                 max_passes: int = 10):
        super().__init__()
        if kernel not in ("linear", "quadratic"):
            raise InvariantError(f"unknown SVM kernel {kernel!r}")
        self.kernel = kernel
        self.kind = "svm_linear" if kernel == "linear" else "svm_quadratic"
        self.C = C
        self.tol = tol
        self.max_passes = max_passes

    def _k(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        g = A @ B.T
        if self.kernel == "quadratic":
            return (g + 1.0) ** 2
        return g

    def fit(self, X, y, seed: int = 0):
        X, y = _check_xy(X, y)
        codes = self._encode(y)
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd < 1e-12] = 1.0
        self.scale_ = sd
        Z = (X - self.mean_) / self.scale_
        self.pairs_: list[_BinarySVM] = []
        c = len(self.classes_)
        pair_no = 0
        for a in range(c):
            for bq in range(a + 1, c):
                mask = (codes == a) | (codes == bq)
                rows = np.where(mask)[0]
                zy = np.where(codes[rows] == a, 1.0, -1.0)
                zx = Z[rows]
                K = self._k(zx, zx)
                rng = np.random.default_rng([seed, pair_no])
                alpha, bias = _smo_binary(K, zy, self.C, self.tol, self.max_passes, rng)
                sv = alpha > 0.0
                self.pairs_.append(
                    _BinarySVM(
                        pos_class=a,
                        neg_class=bq,
                        sv_x=zx[sv],
                        sv_coef=alpha[sv] * zy[sv],
                        b=bias,
                        alpha=alpha,
                        y=zy,
                    )
                )
                pair_no += 1
        return self

    def _decision(self, pair: _BinarySVM, Z: np.ndarray) -> np.ndarray:
        if len(pair.sv_x) == 0:
            return np.full(len(Z), pair.b)
        return self._k(Z, pair.sv_x) @ pair.sv_coef + pair.b

    def predict_scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Z = (X - self.mean_) / self.scale_
        c = len(self.classes_)
        votes = np.zeros((len(Z), c))
        margins = np.zeros((len(Z), c))
        for pair in self.pairs_:
            d = self._decision(pair, Z)
            pos = d > 0.0
            votes[pos, pair.pos_class] += 1.0
            votes[~pos, pair.neg_class] += 1.0
            margins[:, pair.pos_class] += d
            margins[:, pair.neg_class] -= d
        self._last_margins = margins
        return votes / len(self.pairs_) if self.pairs_ else np.ones((len(Z), c)) / c

    def predict(self, X) -> list[str]:
        scores = self.predict_scores(X)
        margins = self._last_margins
        out = []
        for row, mrow in zip(scores, margins):
            top = row.max()
            tied = np.where(row == top)[0]
            if len(tied) > 1:
                tied = tied[np.argsort(-mrow[tied], kind="stable")]
            out.append(self.classes_[int(tied[0])])
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "classes": list(self.classes_),
            "kernel": self.kernel,
            "C": self.C,
            "tol": self.tol,
            "max_passes": self.max_passes,
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
            "pairs": [
                {
                    "pos": p.pos_class,
                    "neg": p.neg_class,
                    "sv_x": p.sv_x.tolist(),
                    "sv_coef": p.sv_coef.tolist(),
                    "b": p.b,
                }
                for p in self.pairs_
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict):
        self = cls(
            kernel=obj["kernel"], C=obj["C"], tol=obj["tol"], max_passes=obj["max_passes"]
        )
        self.classes_ = tuple(obj["classes"])
        self.mean_ = np.asarray(obj["mean"], dtype=float)
        self.scale_ = np.asarray(obj["scale"], dtype=float)
        self.pairs_ = [
            _BinarySVM(
                pos_class=int(p["pos"]),
                neg_class=int(p["neg"]),
                sv_x=np.asarray(p["sv_x"], dtype=float).reshape(len(p["sv_coef"]), -1)
                if p["sv_coef"]
                else np.zeros((0, len(obj["mean"]))),
                sv_coef=np.asarray(p["sv_coef"], dtype=float),
                b=float(p["b"]),
            )
            for p in obj["pairs"]
        ]
        return self


_CLASSES = {
    "knn": KNNClassifier,
    "naive_bayes": NaiveBayesClassifier,
    "decision_tree": DecisionTreeClassifier,
    "random_forest": RandomForestClassifier,
}


def make_classifier(kind: str, **hyper):
    if kind in ("svm_linear", "svm_quadratic"):
        kernel = "linear" if kind == "svm_linear" else "quadratic"
        return SVMClassifier(kernel=kernel, **hyper)
    try:
        return _CLASSES[kind](**hyper)
    except KeyError:
        raise DataFormatError(f"unknown classifier kind {kind!r}") from None


def classifier_from_dict(obj: dict):
    kind = obj.get("kind")
    if kind in ("svm_linear", "svm_quadratic"):
        return SVMClassifier.from_dict(obj)
    if kind in _CLASSES:
        return _CLASSES[kind].from_dict(obj)
    raise DataFormatError(f"unknown classifier kind {kind!r}")
