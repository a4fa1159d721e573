"""Shapelet discovery and the shapelet transform.

Candidates are every window of every training series with length between
min_len and max_len. A candidate is z-normalized, scored by the information
gain of the best single threshold on its distance line over the training
set, and the top k survive after pruning self-similar candidates (same
source series, index ranges overlapping by at least half the shorter
length). The transform maps a series to its distance to each retained
shapelet: the minimum over windows of the length-normalized squared
Euclidean distance between the z-normalized window and the shapelet.
Windows with variance below 1e-12 z-normalize to all zeros.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DataFormatError, InvariantError

VARIANCE_FLOOR = 1e-12

DEFAULT_MIN_LEN = 9
DEFAULT_MAX_LEN = 36


@njit(cache=True)
def _znorm(w):
    n = w.shape[0]
    mean = 0.0
    for i in range(n):
        mean += w[i]
    mean /= n
    var = 0.0
    for i in range(n):
        d = w[i] - mean
        var += d * d
    var /= n
    out = np.empty(n)
    if var < VARIANCE_FLOOR:
        for i in range(n):
            out[i] = 0.0
    else:
        sd = var**0.5
        for i in range(n):
            out[i] = (w[i] - mean) / sd
    return out


@njit(cache=True)
def _min_window_distance(series, shapelet):
    """Min over windows of mean squared difference after z-normalization."""
    L = shapelet.shape[0]
    n = series.shape[0]
    best = np.inf
    for start in range(n - L + 1):
        w = _znorm(series[start : start + L])
        acc = 0.0
        for i in range(L):
            d = w[i] - shapelet[i]
            acc += d * d
        acc /= L
        if acc < best:
            best = acc
    return best


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


def best_split_gain(distances: np.ndarray, y: np.ndarray, n_classes: int) -> tuple[float, float]:
    """Information gain (bits) of the best single threshold on the distance
    line, scanning midpoints between consecutive distinct sorted values.
    Returns (gain, threshold)."""
    order = np.argsort(distances, kind="stable")
    d = distances[order]
    labels = y[order]
    total = np.bincount(labels, minlength=n_classes)
    base = _entropy(total)
    n = len(d)
    left = np.zeros(n_classes, dtype=np.int64)
    best_gain, best_thr = 0.0, float(d[0]) if n else 0.0
    for i in range(n - 1):
        left[labels[i]] += 1
        if d[i + 1] == d[i]:
            continue
        right = total - left
        k = i + 1
        rem = (k / n) * _entropy(left) + ((n - k) / n) * _entropy(right)
        gain = base - rem
        if gain > best_gain:
            best_gain = gain
            best_thr = 0.5 * (float(d[i]) + float(d[i + 1]))
    return best_gain, best_thr


@dataclass(frozen=True, eq=False)
class Shapelet:
    values: np.ndarray  # z-normalized
    series_index: int
    start: int
    length: int
    gain: float
    threshold: float

    def __eq__(self, other):
        if not isinstance(other, Shapelet):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and (self.series_index, self.start, self.length) ==
            (other.series_index, other.start, other.length)
        )


@dataclass
class ShapeletTransformModel:
    shapelets: list[Shapelet]
    class_labels: tuple[str, ...]
    min_len: int
    max_len: int


def _self_similar(a: Shapelet, series_index: int, start: int, length: int) -> bool:
    if a.series_index != series_index:
        return False
    lo = max(a.start, start)
    hi = min(a.start + a.length, start + length)
    overlap = max(0, hi - lo)
    return overlap * 2 >= min(a.length, length)


def discover_shapelets(
    series: list[np.ndarray] | np.ndarray,
    labels: list[str],
    min_len: int = DEFAULT_MIN_LEN,
    max_len: int = DEFAULT_MAX_LEN,
    k: int | None = None,
    offset_stride: int = 1,
    length_stride: int = 1,
) -> ShapeletTransformModel:
    """Exhaustive candidate scan ordered by (gain desc, series index,
    offset, length); self-similar candidates are pruned greedily."""
    mat = [np.ascontiguousarray(s, dtype=float) for s in series]
    if len(mat) != len(labels):
        raise DataFormatError("series and labels must have equal length")
    if len(mat) < 2:
        raise InvariantError("shapelet discovery needs at least two series")
    shortest = min(len(s) for s in mat)
    if min_len < 3 or min_len > max_len:
        raise InvariantError(f"invalid shapelet length range [{min_len}, {max_len}]")
    max_len = min(max_len, shortest)
    if min_len > shortest:
        raise InvariantError(
            f"min_len {min_len} exceeds the shortest series length {shortest}"
        )
    class_labels = tuple(sorted(set(labels)))
    if len(class_labels) < 2:
        raise InvariantError("shapelet discovery needs at least two classes")
    if k is None:
        k = min(100, 10 * len(class_labels))
    y = np.array([class_labels.index(c) for c in labels], dtype=np.int64)

    candidates = []
    for si, s in enumerate(mat):
        for length in range(min_len, max_len + 1, length_stride):
            for start in range(0, len(s) - length + 1, offset_stride):
                shp = _znorm(s[start : start + length])
                dists = np.array([_min_window_distance(t, shp) for t in mat])
                gain, thr = best_split_gain(dists, y, len(class_labels))
                candidates.append((gain, si, start, length, thr, shp))
    # quality descending; ties by source series, then offset, then length
    candidates.sort(key=lambda c: (-c[0], c[1], c[2], c[3]))
    kept: list[Shapelet] = []
    for gain, si, start, length, thr, shp in candidates:
        if len(kept) >= k:
            break
        if any(_self_similar(prev, si, start, length) for prev in kept):
            continue
        kept.append(
            Shapelet(
                values=shp,
                series_index=si,
                start=start,
                length=length,
                gain=float(gain),
                threshold=float(thr),
            )
        )
    return ShapeletTransformModel(
        shapelets=kept, class_labels=class_labels, min_len=min_len, max_len=max_len
    )


def shapelet_transform(model: ShapeletTransformModel, series) -> np.ndarray:
    """Distance matrix (n_series, n_shapelets)."""
    if isinstance(series, np.ndarray) and series.ndim == 1:
        series = [series]
    mat = [np.ascontiguousarray(s, dtype=float) for s in series]
    out = np.zeros((len(mat), len(model.shapelets)))
    for j, shp in enumerate(model.shapelets):
        for i, s in enumerate(mat):
            if len(s) < shp.length:
                raise DataFormatError(
                    f"series of length {len(s)} shorter than shapelet length {shp.length}"
                )
            out[i, j] = _min_window_distance(s, shp.values)
    return out


def shapelet_model_to_dict(model: ShapeletTransformModel) -> dict:
    return {
        "class_labels": list(model.class_labels),
        "min_len": model.min_len,
        "max_len": model.max_len,
        "shapelets": [
            {
                "values": [float(x) for x in s.values],
                "series_index": int(s.series_index),
                "start": int(s.start),
                "length": int(s.length),
                "gain": float(s.gain),
                "threshold": float(s.threshold),
            }
            for s in model.shapelets
        ],
    }


def save_shapelets(model: ShapeletTransformModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(shapelet_model_to_dict(model), fh, indent=2)
        fh.write("\n")


def shapelets_from_dict(obj: dict) -> ShapeletTransformModel:
    return ShapeletTransformModel(
        shapelets=[
            Shapelet(
                values=np.asarray(s["values"], dtype=float),
                series_index=int(s["series_index"]),
                start=int(s["start"]),
                length=int(s["length"]),
                gain=float(s["gain"]),
                threshold=float(s["threshold"]),
            )
            for s in obj["shapelets"]
        ],
        class_labels=tuple(obj["class_labels"]),
        min_len=int(obj["min_len"]),
        max_len=int(obj["max_len"]),
    )


def load_shapelets(path) -> ShapeletTransformModel:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        return shapelets_from_dict(obj)
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: malformed shapelet model ({exc})") from None
