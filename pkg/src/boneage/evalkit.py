"""Evaluation protocol: deterministic splitters, staging and age metrics,
McNemar's paired test, and report/figure emission.

Within-one accuracy counts a prediction as acceptable when its stage index
is at most one away from the truth on the global B..I scale, so the measure
is stable even when a run only contains a subset of the stages. Reports are
written as JSON plus a markdown table; scatter plots are SVG files with a
numeric CSV companion and carry no timestamp so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy import stats

from .core import STAGE_INDEX
from .errors import DataFormatError, InvariantError

matplotlib.rcParams["svg.hashsalt"] = "boneage"

EXACT_MCNEMAR_LIMIT = 25


def stratified_kfold(labels, k: int, seed: int = 0) -> list[np.ndarray]:
    """Index folds with per-class counts differing by at most one across
    folds. Deterministic in (labels, k, seed)."""
    labels = list(labels)
    n = len(labels)
    if not (1 <= k <= n):
        raise InvariantError(f"fold count {k} outside 1..{n}")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for cls in sorted(set(str(c) for c in labels)):
        idx = np.array([i for i, c in enumerate(labels) if str(c) == cls])
        idx = idx[rng.permutation(len(idx))]
        for i in idx:
            folds[cursor % k].append(int(i))
            cursor += 1
    return [np.array(sorted(f), dtype=int) for f in folds]


def loocv(n: int) -> list[np.ndarray]:
    if n < 1:
        raise InvariantError("leave-one-out needs at least one instance")
    return [np.array([i], dtype=int) for i in range(n)]


def train_test_split(labels, train_size: int = 400, seed: int = 0):
    """Stratified split into (train_idx, test_idx) with the requested train
    size (proportional per class, largest remainders first)."""
    labels = list(labels)
    n = len(labels)
    if not (0 < train_size < n):
        raise InvariantError(f"train_size {train_size} outside 1..{n - 1}")
    rng = np.random.default_rng(seed)
    per_class = {}
    for cls in sorted(set(labels)):
        idx = np.array([i for i, c in enumerate(labels) if c == cls])
        per_class[cls] = idx[rng.permutation(len(idx))]
    quota = {c: train_size * len(v) / n for c, v in per_class.items()}
    take = {c: int(math.floor(q)) for c, q in quota.items()}
    short = train_size - sum(take.values())
    for c in sorted(quota, key=lambda c: -(quota[c] - take[c]))[:short]:
        take[c] += 1
    train: list[int] = []
    test: list[int] = []
    for c, idx in per_class.items():
        train.extend(int(i) for i in idx[: take[c]])
        test.extend(int(i) for i in idx[take[c] :])
    return np.array(sorted(train)), np.array(sorted(test))


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]  # rows = truth, columns = prediction

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=int)

    def total(self) -> int:
        return int(self.as_array().sum())


def _stage_sorted(labels) -> tuple[str, ...]:
    uniq = sorted(set(labels))
    if all(s in STAGE_INDEX for s in uniq):
        uniq.sort(key=lambda s: STAGE_INDEX[s])
    return tuple(uniq)


def confusion_matrix(truth, pred) -> ConfusionMatrix:
    truth = list(truth)
    pred = list(pred)
    if len(truth) != len(pred) or not truth:
        raise DataFormatError(
            f"truth and prediction sequences must match and be non-empty "
            f"({len(truth)} vs {len(pred)})"
        )
    labels = _stage_sorted(truth + pred)
    pos = {c: i for i, c in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=int)
    for t, p in zip(truth, pred):
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(labels=labels, counts=tuple(tuple(int(x) for x in row) for row in counts))


def classification_metrics(truth, pred) -> dict:
    """Accuracy, within-one accuracy (global stage indices), and the
    confusion matrix."""
    cm = confusion_matrix(truth, pred)
    truth = list(truth)
    pred = list(pred)
    n = len(truth)
    correct = sum(1 for t, p in zip(truth, pred) if t == p)
    if all(s in STAGE_INDEX for s in cm.labels):
        within = sum(
            1
            for t, p in zip(truth, pred)
            if abs(STAGE_INDEX[t] - STAGE_INDEX[p]) <= 1
        )
    else:
        order = {c: i for i, c in enumerate(cm.labels)}
        within = sum(1 for t, p in zip(truth, pred) if abs(order[t] - order[p]) <= 1)
    return {
        "n": n,
        "accuracy": correct / n,
        "within_one": within / n,
        "confusion": cm,
    }


def regression_metrics(truth, pred) -> dict:
    t = np.asarray(list(truth), dtype=float)
    p = np.asarray(list(pred), dtype=float)
    if t.shape != p.shape or t.size == 0:
        raise DataFormatError("regression metrics need matching non-empty vectors")
    err = p - t
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    tss = float(np.sum((t - t.mean()) ** 2))
    r2 = None if tss == 0.0 else 1.0 - float(np.sum(err**2)) / tss
    return {"n": int(t.size), "rmse": rmse, "mae": mae, "r2": r2}


@dataclass(frozen=True)
class McNemarResult:
    statistic: float
    p_value: float
    b: int  # A correct, B wrong
    c: int  # A wrong, B correct
    exact: bool


def mcnemar(truth, pred_a, pred_b) -> McNemarResult:
    """Paired comparison of two classifiers on one truth sequence. Exact
    binomial when fewer than 25 discordant pairs, else the continuity-
    corrected chi-square. Zero discordants give p = 1."""
    truth = list(truth)
    pred_a = list(pred_a)
    pred_b = list(pred_b)
    if not (len(truth) == len(pred_a) == len(pred_b)) or not truth:
        raise DataFormatError("McNemar needs three equal-length non-empty sequences")
    b = sum(1 for t, a, q in zip(truth, pred_a, pred_b) if a == t and q != t)
    c = sum(1 for t, a, q in zip(truth, pred_a, pred_b) if a != t and q == t)
    m = b + c
    if m == 0:
        return McNemarResult(statistic=0.0, p_value=1.0, b=b, c=c, exact=True)
    if m < EXACT_MCNEMAR_LIMIT:
        p = min(1.0, 2.0 * float(stats.binom.cdf(min(b, c), m, 0.5)))
        return McNemarResult(statistic=float(abs(b - c)), p_value=p, b=b, c=c, exact=True)
    chi2 = (abs(b - c) - 1.0) ** 2 / m
    p = float(stats.chi2.sf(chi2, 1))
    return McNemarResult(statistic=chi2, p_value=p, b=b, c=c, exact=False)


@dataclass
class EvaluationReport:
    task: str  # classification | regression
    metrics: dict
    confusion: ConfusionMatrix | None = None
    folds: list[dict] = field(default_factory=list)
    seed: int | None = None
    config: dict = field(default_factory=dict)


def _fmt_pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def report_to_markdown(report: EvaluationReport) -> str:
    lines = [f"# Evaluation report ({report.task})", ""]
    if report.task == "classification":
        acc = report.metrics.get("accuracy")
        within = report.metrics.get("within_one")
        lines += [
            "| scope | correct (%) | within one (%) |",
            "| --- | --- | --- |",
            f"| overall | {'' if acc is None else _fmt_pct(acc)} | "
            f"{'' if within is None else _fmt_pct(within)} |",
            "",
        ]
        if report.confusion is not None:
            labels = report.confusion.labels
            lines.append("| truth \\ pred | " + " | ".join(labels) + " |")
            lines.append("| --- |" + " --- |" * len(labels))
            for lab, row in zip(labels, report.confusion.counts):
                lines.append(f"| {lab} | " + " | ".join(str(x) for x in row) + " |")
            lines.append("")
    else:
        lines += ["| metric | value |", "| --- | --- |"]
        for key in ("rmse", "mae", "r2"):
            val = report.metrics.get(key)
            lines.append(f"| {key} | {'' if val is None else f'{val:.4f}'} |")
        lines.append("")
    if report.folds:
        lines.append(f"folds: {len(report.folds)}")
        lines.append("")
    lines.append(f"instances: {report.metrics.get('n', 0)}")
    lines.append("")
    return "\n".join(lines)


def report_to_dict(report: EvaluationReport) -> dict:
    metrics = dict(report.metrics)
    metrics.pop("confusion", None)
    obj = {
        "task": report.task,
        "metrics": metrics,
        "seed": report.seed,
        "config": report.config,
        "folds": report.folds,
    }
    if report.confusion is not None:
        obj["confusion"] = {
            "labels": list(report.confusion.labels),
            "counts": [list(r) for r in report.confusion.counts],
        }
    return obj


def emit_report(report: EvaluationReport, out_dir) -> dict:
    """Write report.json and report.md into out_dir; returns the paths."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "report.json")
    md_path = os.path.join(out_dir, "report.md")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(report_to_markdown(report))
    return {"json": json_path, "markdown": md_path}


def emit_scatter(truth, pred, path) -> dict:
    """Truth/prediction scatter with a dashed identity line and a solid
    least-squares fit, saved as SVG plus a CSV of the plotted points."""
    t = np.asarray(list(truth), dtype=float)
    p = np.asarray(list(pred), dtype=float)
    if t.shape != p.shape or t.size == 0:
        raise DataFormatError("scatter needs matching non-empty vectors")
    path = str(path)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(t, p, s=18, color="#1f77b4", zorder=3)
    lo = float(min(t.min(), p.min()))
    hi = float(max(t.max(), p.max()))
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    lo, hi = lo - pad, hi + pad
    ax.plot([lo, hi], [lo, hi], linestyle="--", color="gray", label="identity")
    if t.size >= 2 and np.ptp(t) > 0.0:
        slope, intercept = np.polyfit(t, p, 1)
        ax.plot(
            [lo, hi],
            [slope * lo + intercept, slope * hi + intercept],
            linestyle="-",
            color="#d62728",
            label="least squares",
        )
    ax.set_xlabel("truth")
    ax.set_ylabel("prediction")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    csv_path = path[:-4] + ".csv" if path.endswith(".svg") else path + ".csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["truth", "pred"])
        for a, q in zip(t, p):
            w.writerow([repr(float(a)), repr(float(q))])
    return {"svg": path, "csv": csv_path}
