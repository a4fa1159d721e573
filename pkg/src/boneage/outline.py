"""1-D radial representation of a bone record.

A record becomes 80 values: 50 arc-length-uniform samples of the phalanx
outline and 30 of the epiphysis outline (zeros when absent), each value the
distance from the sample point to the owning outline's area centroid.
Traversal is clockwise in image coordinates (y down). The canonical start
is the outline vertex nearest to where the ray from the centroid along the
positive minor axis of the fitted ellipse crosses the outline, which makes
the series invariant to the vertex ordering of the input polygon.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import BONES, STAGES, BoneRecord
from .errors import DataFormatError, InvariantError
from .features import fit_ellipse
from .geometry import (
    cumulative_arclength,
    ensure_screen_clockwise,
    polygon_area,
    polygon_centroid,
    ray_outline_intersection,
    resample_closed,
)

PHALANX_SAMPLES = 50
EPIPHYSIS_SAMPLES = 30
SERIES_LENGTH = PHALANX_SAMPLES + EPIPHYSIS_SAMPLES


@dataclass(frozen=True, eq=False)
class RadialSeries:
    values: np.ndarray  # shape (80,)
    tw_stage: str | None
    subject_id: str
    bone: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (SERIES_LENGTH,):
            raise DataFormatError(
                f"radial series must have {SERIES_LENGTH} values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)) or np.any(v < 0.0):
            raise DataFormatError("radial series values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        if not isinstance(other, RadialSeries):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and self.tw_stage == other.tw_stage
            and self.subject_id == other.subject_id
            and self.bone == other.bone
        )


def _radial_samples(outline: np.ndarray, count: int, what: str) -> np.ndarray:
    poly = ensure_screen_clockwise(outline)
    if polygon_area(poly) <= 0.0:
        raise InvariantError(f"{what}: outline encloses zero area")
    centroid = polygon_centroid(poly)
    fit = fit_ellipse(poly)
    hit = ray_outline_intersection(poly, centroid, fit.minor_direction)
    if hit is None:
        hit = ray_outline_intersection(poly, centroid, -fit.minor_direction)
    if hit is None:
        raise InvariantError(f"{what}: centroid ray misses the outline")
    start_idx = int(np.argmin(np.sum((poly - hit[1]) ** 2, axis=1)))
    start_arc = cumulative_arclength(poly)[start_idx]
    samples = resample_closed(poly, count, start=start_arc)
    return np.hypot(*(samples - centroid).T)


def to_radial_series(rec: BoneRecord) -> RadialSeries:
    name = f"{rec.subject.subject_id}/{rec.bone}"
    values = np.zeros(SERIES_LENGTH)
    values[:PHALANX_SAMPLES] = _radial_samples(rec.phalanx, PHALANX_SAMPLES, f"{name} phalanx")
    if rec.epiphysis is not None:
        values[PHALANX_SAMPLES:] = _radial_samples(
            rec.epiphysis, EPIPHYSIS_SAMPLES, f"{name} epiphysis"
        )
    return RadialSeries(
        values=values, tw_stage=rec.tw_stage, subject_id=rec.subject.subject_id, bone=rec.bone
    )


SERIES_CSV_HEADER = tuple(f"v{i}" for i in range(SERIES_LENGTH)) + (
    "tw_stage",
    "subject_id",
    "bone",
)


def series_to_csv(series: list[RadialSeries], path) -> None:
    """Write series rows; float cells use repr, which round-trips exactly
    (shortest form, at most 17 significant digits)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_CSV_HEADER)
        for s in series:
            w.writerow(
                [repr(float(x)) for x in s.values] + [s.tw_stage or "", s.subject_id, s.bone]
            )


def series_from_csv(path) -> list[RadialSeries]:
    out: list[RadialSeries] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SERIES_CSV_HEADER:
            raise DataFormatError(f"{path}: unexpected series CSV header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(SERIES_CSV_HEADER):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(SERIES_CSV_HEADER)} columns, got {len(row)}"
                )
            try:
                values = np.array([float(x) for x in row[:SERIES_LENGTH]])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric series value") from None
            stage, sid, bone = row[SERIES_LENGTH:]
            if stage and stage not in STAGES:
                raise DataFormatError(f"{path}:{lineno}: unknown stage {stage!r}")
            if bone not in BONES:
                raise DataFormatError(f"{path}:{lineno}: unknown bone {bone!r}")
            out.append(
                RadialSeries(values=values, tw_stage=stage or None, subject_id=sid, bone=bone)
            )
    return out
