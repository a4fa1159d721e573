"""Ellipse fitting and the 25-value shape description of a bone record.

Feature layout (index = name):

==== =====================================================================
f1   epiphysis present (1/0)
f2   phalanx fitted-ellipse major axis length
f3   phalanx fitted-ellipse minor axis length
f4   phalanx extent projected onto the major axis ("height")
f5   phalanx chord width at t=0.50 of f4, perpendicular to the major axis
f6   phalanx chord width at t=0.25 (distal quartile)
f7   phalanx chord width at t=0.75 (proximal quartile)
f8   phalanx chord width at t=0.90 (metaphysis)
f9   phalanx eccentricity sqrt(1 - (minor/major)^2)
f10  f5 / f4
f11  phalanx roundness 4*pi*area / perimeter^2
f12  phalanx area / perimeter
f13  f6 / f5
f14  f7 / f5
f15  f8 / f5
f16  epiphysis fitted-ellipse major axis length
f17  epiphysis fitted-ellipse minor axis length
f18  epiphysis extent projected onto its major axis
f19  epiphysis chord width at t=0.50 of f18
f20  epiphysis eccentricity
f21  distance between the two fitted-ellipse centers
f22  f19 / f18
f23  epiphysis roundness
f24  epiphysis area / perimeter
f25  f19 / f8
==== =====================================================================

Chord fractions t are measured from the distal end of the phalanx. The
metaphysis end is the end of the major axis nearer the epiphysis center when
an epiphysis exists, otherwise the wider of the two end chords (t=0.05
versus t=0.95). When the epiphysis is absent every epiphysis-derived value
is the sentinel 0 and f1 = 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import BONES, ETHNICITIES, SEXES, STAGES, BoneRecord
from .errors import DataFormatError, NumericError
from .geometry import (
    as_points,
    chord_width,
    ensure_screen_clockwise,
    polygon_area,
    polygon_centroid,
    polygon_perimeter,
)

FEATURE_NAMES = tuple(f"f{i}" for i in range(1, 26))
_CHORD_FRACTIONS = {"f5": 0.50, "f6": 0.25, "f7": 0.75, "f8": 0.90}


@dataclass(frozen=True)
class EllipseFit:
    center: np.ndarray
    major_axis_len: float
    minor_axis_len: float
    orientation: float  # radians of the major axis, in [0, pi)

    @property
    def major_direction(self) -> np.ndarray:
        return np.array([np.cos(self.orientation), np.sin(self.orientation)])

    @property
    def minor_direction(self) -> np.ndarray:
        return np.array([-np.sin(self.orientation), np.cos(self.orientation)])

    @property
    def eccentricity(self) -> float:
        r = self.minor_axis_len / self.major_axis_len
        return float(np.sqrt(max(0.0, 1.0 - r * r)))


def fit_ellipse(points) -> EllipseFit:
    """Direct least-squares conic fit constrained to an ellipse.

    Solves the scatter-matrix eigenproblem for the conic coefficients with
    the ellipse constraint 4ac - b^2 = 1 built in, after centering the data
    for conditioning. Degenerate inputs (collinear or near-collinear points,
    hyperbolic solutions) raise NumericError.
    """
    pts = as_points(points)
    if len(pts) < 5:
        raise NumericError("ellipse fit needs at least 5 points")
    mean = pts.mean(axis=0)
    x = pts[:, 0] - mean[0]
    y = pts[:, 1] - mean[1]
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError:
        raise NumericError("degenerate point set: linear scatter block is singular") from None
    m = s1 + s2 @ t
    m = np.vstack([m[2] / 2.0, -m[1], m[0] / 2.0])
    try:
        eigval, eigvec = np.linalg.eig(m)
    except np.linalg.LinAlgError:
        raise NumericError("ellipse eigenproblem failed") from None
    cond = 4.0 * eigvec[0] * eigvec[2] - eigvec[1] ** 2
    ok = np.where(np.isreal(eigval) & (np.real(cond) > 0.0))[0]
    if len(ok) == 0:
        raise NumericError("no elliptical solution for this point set")
    a1 = np.real(eigvec[:, ok[0]])
    a2 = t @ a1
    A, B, C = a1
    D, E, F = a2
    den = B * B - 4.0 * A * C
    if den >= 0.0:
        raise NumericError("conic solution is not an ellipse")
    x0 = (2.0 * C * D - B * E) / den
    y0 = (2.0 * A * E - B * D) / den
    mu = A * x0 * x0 + B * x0 * y0 + C * y0 * y0 + D * x0 + E * y0 + F
    quad = np.array([[A, B / 2.0], [B / 2.0, C]])
    lam, vec = np.linalg.eigh(quad)
    with np.errstate(invalid="ignore", divide="ignore"):
        semi = np.sqrt(-mu / lam)
    if not np.all(np.isfinite(semi)) or np.any(semi <= 0.0):
        raise NumericError("degenerate ellipse axes")
    # eigh sorts ascending, so lam[0] belongs to the major axis
    order = np.argsort(-semi)
    semi_major, semi_minor = semi[order]
    major_vec = vec[:, order[0]]
    angle = float(np.arctan2(major_vec[1], major_vec[0])) % np.pi
    return EllipseFit(
        center=np.array([x0 + mean[0], y0 + mean[1]]),
        major_axis_len=2.0 * float(semi_major),
        minor_axis_len=2.0 * float(semi_minor),
        orientation=angle,
    )


@dataclass(frozen=True, eq=False)
class ShapeFeatures:
    values: np.ndarray  # shape (25,), ordered per FEATURE_NAMES
    tw_stage: str | None
    age_years: float | None
    sex: str | None
    ethnicity: str | None
    subject_id: str
    bone: str

    def get(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    @property
    def epiphysis_present(self) -> bool:
        return self.values[0] == 1.0

    def __eq__(self, other):
        if not isinstance(other, ShapeFeatures):
            return NotImplemented
        meta = ("tw_stage", "age_years", "sex", "ethnicity", "subject_id", "bone")
        return np.array_equal(self.values, other.values) and all(
            getattr(self, f) == getattr(other, f) for f in meta
        )


def _axis_measures(outline: np.ndarray, fit: EllipseFit, flip: bool):
    """Extent along the major axis plus the chord widths, with t measured
    from the distal end (flip=True when the metaphysis sits at the low end
    of the projection)."""
    u = fit.major_direction
    proj = outline @ u
    lo, hi = float(proj.min()), float(proj.max())
    extent = hi - lo
    if extent <= 0.0:
        raise NumericError("outline has zero extent along the major axis")

    def chord_at(tfrac: float) -> float:
        s = (hi - tfrac * extent) if flip else (lo + tfrac * extent)
        anchor = outline.mean(axis=0) + (s - outline.mean(axis=0) @ u) * u
        w = chord_width(outline, anchor, fit.minor_direction)
        if w <= 0.0:
            raise NumericError(f"chord at t={tfrac} misses the outline")
        return w

    return extent, chord_at


def extract_features(rec: BoneRecord) -> ShapeFeatures:
    """Compute the 25 shape features of one bone record."""
    phalanx = ensure_screen_clockwise(rec.phalanx)
    p_fit = fit_ellipse(phalanx)
    u = p_fit.major_direction
    proj = phalanx @ u
    lo, hi = float(proj.min()), float(proj.max())

    epi = None
    epi_fit = None
    if rec.epiphysis is not None:
        epi = ensure_screen_clockwise(rec.epiphysis)
        epi_fit = fit_ellipse(epi)
        # metaphysis = the end nearer the epiphysis center
        flip = abs(float(epi_fit.center @ u) - lo) < abs(float(epi_fit.center @ u) - hi)
    else:
        extent0, chord0 = _axis_measures(phalanx, p_fit, flip=False)
        flip = chord0(0.05) > chord0(0.95)

    extent, chord_at = _axis_measures(phalanx, p_fit, flip)
    f4 = extent
    chords = {name: chord_at(frac) for name, frac in _CHORD_FRACTIONS.items()}
    area = polygon_area(phalanx)
    perim = polygon_perimeter(phalanx)
    if area <= 0.0 or perim <= 0.0:
        raise NumericError(f"degenerate phalanx outline for record {rec.key()}")

    v = np.zeros(25)
    v[1] = p_fit.major_axis_len
    v[2] = p_fit.minor_axis_len
    v[3] = f4
    v[4] = chords["f5"]
    v[5] = chords["f6"]
    v[6] = chords["f7"]
    v[7] = chords["f8"]
    v[8] = p_fit.eccentricity
    v[9] = v[4] / v[3]
    v[10] = 4.0 * np.pi * area / perim**2
    v[11] = area / perim
    v[12] = v[5] / v[4]
    v[13] = v[6] / v[4]
    v[14] = v[7] / v[4]

    if epi_fit is not None:
        e_extent, e_chord = _axis_measures(epi, epi_fit, flip=False)
        e_area = polygon_area(epi)
        e_perim = polygon_perimeter(epi)
        v[0] = 1.0
        v[15] = epi_fit.major_axis_len
        v[16] = epi_fit.minor_axis_len
        v[17] = e_extent
        v[18] = e_chord(0.50)
        v[19] = epi_fit.eccentricity
        v[20] = float(np.hypot(*(p_fit.center - epi_fit.center)))
        v[21] = v[18] / v[17]
        v[22] = 4.0 * np.pi * e_area / e_perim**2
        v[23] = e_area / e_perim
        v[24] = v[18] / v[7]

    return ShapeFeatures(
        values=v,
        tw_stage=rec.tw_stage,
        age_years=rec.subject.age_years,
        sex=rec.subject.sex,
        ethnicity=rec.subject.ethnicity,
        subject_id=rec.subject.subject_id,
        bone=rec.bone,
    )


FEATURE_CSV_META = ("tw_stage", "age_years", "sex", "ethnicity", "subject_id", "bone")
FEATURE_CSV_HEADER = FEATURE_NAMES + FEATURE_CSV_META


def features_to_csv(rows: list[ShapeFeatures], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FEATURE_CSV_HEADER)
        for r in rows:
            w.writerow(
                [repr(float(x)) for x in r.values]
                + [
                    r.tw_stage or "",
                    "" if r.age_years is None else repr(float(r.age_years)),
                    r.sex or "",
                    r.ethnicity or "",
                    r.subject_id,
                    r.bone,
                ]
            )


def features_from_csv(path) -> list[ShapeFeatures]:
    rows: list[ShapeFeatures] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != FEATURE_CSV_HEADER:
            raise DataFormatError(f"{path}: unexpected feature CSV header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(FEATURE_CSV_HEADER):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(FEATURE_CSV_HEADER)} columns, got {len(row)}"
                )
            try:
                values = np.array([float(x) for x in row[:25]])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric feature value") from None
            stage, age, sex, eth, sid, bone = row[25:]
            if stage and stage not in STAGES:
                raise DataFormatError(f"{path}:{lineno}: unknown stage {stage!r}")
            if sex and sex not in SEXES:
                raise DataFormatError(f"{path}:{lineno}: unknown sex {sex!r}")
            if eth and eth not in ETHNICITIES:
                raise DataFormatError(f"{path}:{lineno}: unknown ethnicity {eth!r}")
            if bone not in BONES:
                raise DataFormatError(f"{path}:{lineno}: unknown bone {bone!r}")
            rows.append(
                ShapeFeatures(
                    values=values,
                    tw_stage=stage or None,
                    age_years=float(age) if age else None,
                    sex=sex or None,
                    ethnicity=eth or None,
                    subject_id=sid,
                    bone=bone,
                )
            )
    return rows
