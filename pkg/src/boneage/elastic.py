"""Elastic distances between equal-length series and a 1-NN ensemble.

Seven measure kinds: euclidean, dtw, wdtw, lcss, erp, twed, msm. Euclidean
is the sum of squared differences (no square root) so that DTW with a zero
Sakoe-Chiba window reproduces it exactly. DTW and WDTW also use squared
pointwise costs; LCSS returns 1 - LCS/min(len); ERP uses absolute costs with
gap penalty |x - g|; TWED and MSM follow their defining recurrences with
absolute pointwise costs.

The ensemble holds one member per measure kind. Each member's parameters
are grid-searched to maximize stratified cross-validated 1-NN accuracy on
the training set, that accuracy becomes its voting weight, and prediction
is a weighted vote of the members' nearest-neighbor labels.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import STAGE_INDEX
from .errors import DataFormatError, InvariantError
from .outline import RadialSeries, series_from_csv, series_to_csv

MEASURE_KINDS = ("euclidean", "dtw", "wdtw", "lcss", "erp", "twed", "msm")
ENSEMBLE_KINDS = ("dtw", "wdtw", "lcss", "erp", "twed", "msm")


@njit(cache=True)
def _euclidean(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        s += d * d
    return s


@njit(cache=True)
def _dtw(a, b, band):
    n, m = a.shape[0], b.shape[0]
    dp = np.full((n + 1, m + 1), np.inf)
    dp[0, 0] = 0.0
    for i in range(1, n + 1):
        jlo = max(1, i - band)
        jhi = min(m, i + band)
        for j in range(jlo, jhi + 1):
            d = a[i - 1] - b[j - 1]
            best = dp[i - 1, j - 1]
            if dp[i - 1, j] < best:
                best = dp[i - 1, j]
            if dp[i, j - 1] < best:
                best = dp[i, j - 1]
            dp[i, j] = d * d + best
    return dp[n, m]


@njit(cache=True)
def _wdtw(a, b, g):
    n, m = a.shape[0], b.shape[0]
    half = n / 2.0
    dp = np.full((n + 1, m + 1), np.inf)
    dp[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            w = 1.0 / (1.0 + math.exp(-g * (abs(i - j) - half)))
            d = a[i - 1] - b[j - 1]
            best = dp[i - 1, j - 1]
            if dp[i - 1, j] < best:
                best = dp[i - 1, j]
            if dp[i, j - 1] < best:
                best = dp[i, j - 1]
            dp[i, j] = w * d * d + best
    return dp[n, m]


@njit(cache=True)
def _lcss(a, b, eps, band):
    n, m = a.shape[0], b.shape[0]
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if abs(i - j) <= band and abs(a[i - 1] - b[j - 1]) <= eps:
                dp[i, j] = dp[i - 1, j - 1] + 1
            else:
                best = dp[i - 1, j]
                if dp[i, j - 1] > best:
                    best = dp[i, j - 1]
                dp[i, j] = best
    shorter = n if n < m else m
    return 1.0 - dp[n, m] / shorter


@njit(cache=True)
def _erp(a, b, g, band):
    n, m = a.shape[0], b.shape[0]
    dp = np.full((n + 1, m + 1), np.inf)
    dp[0, 0] = 0.0
    for i in range(1, n + 1):
        if i <= band:
            dp[i, 0] = dp[i - 1, 0] + abs(a[i - 1] - g)
    for j in range(1, m + 1):
        if j <= band:
            dp[0, j] = dp[0, j - 1] + abs(b[j - 1] - g)
    for i in range(1, n + 1):
        jlo = max(1, i - band)
        jhi = min(m, i + band)
        for j in range(jlo, jhi + 1):
            match = dp[i - 1, j - 1] + abs(a[i - 1] - b[j - 1])
            gap_a = dp[i - 1, j] + abs(a[i - 1] - g)
            gap_b = dp[i, j - 1] + abs(b[j - 1] - g)
            best = match
            if gap_a < best:
                best = gap_a
            if gap_b < best:
                best = gap_b
            dp[i, j] = best
    return dp[n, m]


@njit(cache=True)
def _twed(a, b, nu, lam):
    n, m = a.shape[0], b.shape[0]
    pa = np.zeros(n + 1)
    pb = np.zeros(m + 1)
    pa[1:] = a
    pb[1:] = b
    dp = np.full((n + 1, m + 1), np.inf)
    dp[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            match = (
                dp[i - 1, j - 1]
                + abs(pa[i] - pb[j])
                + abs(pa[i - 1] - pb[j - 1])
                + 2.0 * nu * abs(i - j)
            )
            del_a = dp[i - 1, j] + abs(pa[i - 1] - pa[i]) + nu + lam
            del_b = dp[i, j - 1] + abs(pb[j - 1] - pb[j]) + nu + lam
            best = match
            if del_a < best:
                best = del_a
            if del_b < best:
                best = del_b
            dp[i, j] = best
    return dp[n, m]


@njit(cache=True)
def _msm_cost(x, y, z, c):
    if (y <= x <= z) or (y >= x >= z):
        return c
    d1 = abs(x - y)
    d2 = abs(x - z)
    return c + (d1 if d1 < d2 else d2)


@njit(cache=True)
def _msm(a, b, c):
    n, m = a.shape[0], b.shape[0]
    dp = np.full((n, m), np.inf)
    dp[0, 0] = abs(a[0] - b[0])
    for i in range(1, n):
        dp[i, 0] = dp[i - 1, 0] + _msm_cost(a[i], a[i - 1], b[0], c)
    for j in range(1, m):
        dp[0, j] = dp[0, j - 1] + _msm_cost(b[j], a[0], b[j - 1], c)
    for i in range(1, n):
        for j in range(1, m):
            move = dp[i - 1, j - 1] + abs(a[i] - b[j])
            split_a = dp[i - 1, j] + _msm_cost(a[i], a[i - 1], b[j], c)
            split_b = dp[i, j - 1] + _msm_cost(b[j], a[i], b[j - 1], c)
            best = move
            if split_a < best:
                best = split_a
            if split_b < best:
                best = split_b
            dp[i, j] = best
    return dp[n - 1, m - 1]


def _band_width(frac, n: int) -> int:
    """Sakoe-Chiba half-width in samples from a fractional window."""
    if frac is None:
        return n
    if not (0.0 <= frac <= 1.0):
        raise InvariantError(f"window fraction must lie in [0, 1], got {frac}")
    return int(math.ceil(frac * n))


@dataclass(frozen=True)
class ElasticMeasure:
    kind: str
    params: tuple = ()  # sorted (name, value) pairs

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise InvariantError(f"unknown elastic measure kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(sorted(dict(self.params).items())))

    @property
    def param_dict(self) -> dict:
        return dict(self.params)


def measure(kind: str, **params) -> ElasticMeasure:
    return ElasticMeasure(kind=kind, params=tuple(params.items()))


def elastic_distance(m: ElasticMeasure, a, b) -> float:
    """Distance between two equal-length series under measure `m`."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DataFormatError(
            f"elastic distances need equal-length 1-D series, got {a.shape} and {b.shape}"
        )
    if a.shape[0] == 0:
        raise DataFormatError("series must be non-empty")
    p = m.param_dict
    n = a.shape[0]
    if m.kind == "euclidean":
        return float(_euclidean(a, b))
    if m.kind == "dtw":
        return float(_dtw(a, b, _band_width(p.get("window", 1.0), n)))
    if m.kind == "wdtw":
        g = float(p.get("g", 0.05))
        if g < 0.0:
            raise InvariantError("wdtw g must be non-negative")
        return float(_wdtw(a, b, g))
    if m.kind == "lcss":
        eps = float(p.get("epsilon", 0.1))
        if eps < 0.0:
            raise InvariantError("lcss epsilon must be non-negative")
        return float(_lcss(a, b, eps, _band_width(p.get("band", 1.0), n)))
    if m.kind == "erp":
        return float(
            _erp(a, b, float(p.get("g", 0.0)), _band_width(p.get("band", 1.0), n))
        )
    if m.kind == "twed":
        nu = float(p.get("nu", 1e-3))
        lam = float(p.get("lambda", 1.0))
        if nu < 0.0 or lam < 0.0:
            raise InvariantError("twed nu and lambda must be non-negative")
        return float(_twed(a, b, nu, lam))
    if m.kind == "msm":
        c = float(p.get("c", 1.0))
        if c < 0.0:
            raise InvariantError("msm c must be non-negative")
        return float(_msm(a, b, c))
    raise InvariantError(f"unknown elastic measure kind {m.kind!r}")


def default_grids(train_values: np.ndarray) -> dict[str, list[dict]]:
    """Per-kind hyperparameter grids. Window-like values are fractions of
    the series length; value-like thresholds scale with the pooled standard
    deviation of the training values."""
    sigma = float(np.std(train_values))
    hundredths = [round(0.01 * i, 2) for i in range(101)]
    fifths = [sigma * k / 5.0 for k in range(1, 6)]
    bands = [round(0.05 * k, 2) for k in range(1, 6)]
    return {
        "euclidean": [{}],
        "dtw": [{"window": w} for w in hundredths],
        "wdtw": [{"g": g} for g in hundredths],
        "lcss": [{"epsilon": e, "band": d} for e in fifths for d in bands],
        "erp": [{"g": g, "band": d} for g in fifths for d in bands],
        "twed": [
            {"nu": nu, "lambda": lam}
            for nu in (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
            for lam in tuple(0.25 * k for k in range(9))
        ],
        "msm": [{"c": float(c)} for c in np.logspace(-2, 2, 10)],
    }


@dataclass(frozen=True)
class EnsembleMember:
    kind: str
    params: tuple
    weight: float

    def as_measure(self) -> ElasticMeasure:
        return ElasticMeasure(kind=self.kind, params=self.params)


@dataclass
class ElasticEnsembleModel:
    members: list[EnsembleMember]
    references: list[RadialSeries]
    classes: tuple[str, ...]

    def __post_init__(self):
        if not self.members:
            raise InvariantError("ensemble needs at least one member")
        if any(not (0.0 <= m.weight <= 1.0) for m in self.members):
            raise InvariantError("member weights must lie in [0, 1]")


def _label_order(labels) -> tuple[str, ...]:
    uniq = sorted(set(labels))
    if all(s in STAGE_INDEX for s in uniq):
        uniq.sort(key=lambda s: STAGE_INDEX[s])
    return tuple(uniq)


def _pairwise(kind: str, params: dict, values: np.ndarray) -> np.ndarray:
    n = len(values)
    m = measure(kind, **params)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = elastic_distance(m, values[i], values[j])
            out[i, j] = d
            out[j, i] = d
    return out


def _cv_accuracy(dmat: np.ndarray, labels: list[str], folds: list[np.ndarray]) -> float:
    n = len(labels)
    correct = 0
    for fold in folds:
        fold = set(int(i) for i in fold)
        train = [i for i in range(n) if i not in fold]
        if not train:
            continue
        for t in fold:
            row = dmat[t, train]
            nearest = train[int(np.argmin(row))]
            if labels[nearest] == labels[t]:
                correct += 1
    return correct / n


def train_elastic_ensemble(
    series: list[RadialSeries],
    folds: int = 10,
    grids: dict[str, list[dict]] | None = None,
    seed: int = 0,
    kinds: tuple[str, ...] = ENSEMBLE_KINDS,
) -> ElasticEnsembleModel:
    """Grid-search each measure kind by stratified CV 1-NN accuracy and
    weight it by that accuracy. `folds=1` degenerates to leave-one-out.
    Ties on accuracy keep the earliest grid entry."""
    from .evalkit import loocv, stratified_kfold

    labeled = [s for s in series if s.tw_stage is not None]
    if len(labeled) < 2:
        raise InvariantError("ensemble training needs at least two labeled series")
    labels = [s.tw_stage for s in labeled]
    if len(set(labels)) < 2:
        raise InvariantError("ensemble training needs at least two classes")
    values = np.ascontiguousarray(np.vstack([s.values for s in labeled]))
    if folds <= 1:
        fold_list = loocv(len(labeled))
    else:
        fold_list = stratified_kfold(labels, folds, seed)
    grids = grids or default_grids(values)
    members = []
    for kind in kinds:
        grid = grids.get(kind)
        if not grid:
            continue
        best_acc, best_params = -1.0, None
        for params in grid:
            acc = _cv_accuracy(_pairwise(kind, params, values), labels, fold_list)
            if acc > best_acc:
                best_acc, best_params = acc, params
        members.append(
            EnsembleMember(
                kind=kind, params=tuple(sorted(best_params.items())), weight=best_acc
            )
        )
    return ElasticEnsembleModel(
        members=members, references=labeled, classes=_label_order(labels)
    )


def predict_elastic(model: ElasticEnsembleModel, series) -> tuple[str, np.ndarray]:
    """Weighted 1-NN vote. Returns (label, scores over model.classes)."""
    if isinstance(series, RadialSeries):
        query = series.values
    else:
        query = np.asarray(series, dtype=float)
    refs = np.vstack([r.values for r in model.references])
    ref_labels = [r.tw_stage for r in model.references]
    scores = np.zeros(len(model.classes))
    class_pos = {c: i for i, c in enumerate(model.classes)}
    for member in model.members:
        m = member.as_measure()
        dists = np.array([elastic_distance(m, query, r) for r in refs])
        nearest = int(np.argmin(dists))  # argmin takes the first minimum: ties
        scores[class_pos[ref_labels[nearest]]] += member.weight
        # break toward the smaller reference index
    total = scores.sum()
    if total > 0.0:
        scores = scores / total
    else:
        scores = np.full(len(model.classes), 1.0 / len(model.classes))
    label = model.classes[int(np.argmax(scores))]  # first max = lowest stage order
    return label, scores


def ensemble_cv_predictions(
    model: ElasticEnsembleModel, folds: int = 10, seed: int = 0
) -> list[str]:
    """Pooled out-of-fold predictions of the weighted ensemble vote itself,
    reusing the member parameters chosen at training time. Element i is the
    held-out prediction for reference series i."""
    from .evalkit import loocv, stratified_kfold

    labels = [r.tw_stage for r in model.references]
    values = np.vstack([r.values for r in model.references])
    n = len(labels)
    fold_list = loocv(n) if folds <= 1 else stratified_kfold(labels, folds, seed)
    dmats = {
        member: _pairwise(member.kind, dict(member.params), values)
        for member in model.members
    }
    class_pos = {c: i for i, c in enumerate(model.classes)}
    preds: list[str | None] = [None] * n
    for fold in fold_list:
        fold = set(int(i) for i in fold)
        train = [i for i in range(n) if i not in fold]
        for t in fold:
            scores = np.zeros(len(model.classes))
            for member, dmat in dmats.items():
                nearest = train[int(np.argmin(dmat[t, train]))]
                scores[class_pos[labels[nearest]]] += member.weight
            preds[t] = model.classes[int(np.argmax(scores))]
    return preds  # type: ignore[return-value]


def ensemble_cv_accuracy(
    model: ElasticEnsembleModel, folds: int = 10, seed: int = 0
) -> float:
    labels = [r.tw_stage for r in model.references]
    preds = ensemble_cv_predictions(model, folds=folds, seed=seed)
    return sum(p == t for p, t in zip(preds, labels)) / len(labels)


def save_elastic(model: ElasticEnsembleModel, model_path, series_path) -> None:
    series_to_csv(model.references, series_path)
    obj = {
        "representation": "radial",
        "members": [
            {"kind": m.kind, "params": dict(m.params), "weight": m.weight}
            for m in model.members
        ],
        "classes": list(model.classes),
        "reference_indices": list(range(len(model.references))),
        "series_file": str(series_path),
    }
    with open(model_path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def load_elastic(model_path, series_path=None) -> ElasticEnsembleModel:
    with open(model_path, encoding="utf-8") as fh:
        obj = json.load(fh)
    path = series_path or obj.get("series_file")
    if path is None:
        raise DataFormatError(f"{model_path}: no reference series file recorded")
    if not os.path.exists(path):
        # tolerate relocated model directories
        candidate = os.path.join(os.path.dirname(str(model_path)), os.path.basename(str(path)))
        if os.path.exists(candidate):
            path = candidate
    all_series = series_from_csv(path)
    try:
        refs = [all_series[i] for i in obj["reference_indices"]]
        members = [
            EnsembleMember(
                kind=m["kind"], params=tuple(sorted(m["params"].items())), weight=m["weight"]
            )
            for m in obj["members"]
        ]
        classes = tuple(obj["classes"])
    except (KeyError, IndexError, TypeError) as exc:
        raise DataFormatError(f"{model_path}: malformed ensemble model ({exc})") from None
    return ElasticEnsembleModel(members=members, references=refs, classes=classes)
