"""Domain records and JSON-lines dataset storage.

A dataset is one bone record per line. Each record carries the subject's
demographics, the bone kind, the phalanx outline, the epiphysis outline when
one is present, and the ossification stage label when known. An optional
first line holding only ``provenance``/``seed`` keys carries dataset-level
metadata so that a save/load round trip reproduces the dataset field for
field.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError
from .geometry import as_points, polygon_centroid

STAGES = ("B", "C", "D", "E", "F", "G", "H", "I")
STAGE_INDEX = {s: i for i, s in enumerate(STAGES)}
BONES = ("distal", "middle", "proximal")
SEXES = ("M", "F")
ETHNICITIES = ("ASI", "BLK", "CAU", "HIS")
AGE_RANGE = (2.0, 18.0)

MIN_OUTLINE_POINTS = 8


def stage_index(stage: str) -> int:
    try:
        return STAGE_INDEX[stage]
    except KeyError:
        raise DataFormatError(f"unknown ossification stage {stage!r}") from None


def validate_outline(points, what: str) -> np.ndarray:
    pts = as_points(points)
    if len(pts) < MIN_OUTLINE_POINTS:
        raise DataFormatError(
            f"{what} outline has {len(pts)} points, needs at least {MIN_OUTLINE_POINTS}"
        )
    nxt = np.roll(pts, -1, axis=0)
    if np.any(np.all(pts == nxt, axis=1)):
        raise DataFormatError(f"{what} outline repeats a point consecutively")
    return pts


@dataclass(frozen=True)
class Subject:
    subject_id: str
    age_years: float
    sex: str
    ethnicity: str

    def __post_init__(self):
        if not self.subject_id:
            raise DataFormatError("subject_id must be a non-empty string")
        if not np.isfinite(self.age_years) or self.age_years <= 0.0:
            raise DataFormatError(
                f"subject {self.subject_id}: age must be positive, got {self.age_years}"
            )
        if self.sex not in SEXES:
            raise DataFormatError(f"subject {self.subject_id}: unknown sex {self.sex!r}")
        if self.ethnicity not in ETHNICITIES:
            raise DataFormatError(
                f"subject {self.subject_id}: unknown ethnicity {self.ethnicity!r}"
            )
        if not (AGE_RANGE[0] <= self.age_years <= AGE_RANGE[1]):
            warnings.warn(
                f"subject {self.subject_id}: age {self.age_years} outside the "
                f"calibrated range {AGE_RANGE}",
                stacklevel=2,
            )


@dataclass(frozen=True, eq=False)
class BoneRecord:
    subject: Subject
    bone: str
    phalanx: np.ndarray
    epiphysis: np.ndarray | None = None
    tw_stage: str | None = None

    def __post_init__(self):
        if self.bone not in BONES:
            raise DataFormatError(f"unknown bone kind {self.bone!r}")
        if self.tw_stage is not None and self.tw_stage not in STAGES:
            raise DataFormatError(f"unknown ossification stage {self.tw_stage!r}")
        object.__setattr__(self, "phalanx", validate_outline(self.phalanx, "phalanx"))
        if self.epiphysis is not None:
            epi = validate_outline(self.epiphysis, "epiphysis")
            object.__setattr__(self, "epiphysis", epi)
            pc = polygon_centroid(self.phalanx)
            ec = polygon_centroid(epi)
            if np.allclose(pc, ec, atol=1e-9):
                raise DataFormatError(
                    f"record {self.key()}: epiphysis centroid coincides with phalanx centroid"
                )

    def key(self) -> tuple[str, str]:
        return (self.subject.subject_id, self.bone)

    @property
    def has_epiphysis(self) -> bool:
        return self.epiphysis is not None

    def __eq__(self, other):
        if not isinstance(other, BoneRecord):
            return NotImplemented
        if (self.subject, self.bone, self.tw_stage) != (
            other.subject,
            other.bone,
            other.tw_stage,
        ):
            return False
        if not np.array_equal(self.phalanx, other.phalanx):
            return False
        if (self.epiphysis is None) != (other.epiphysis is None):
            return False
        return self.epiphysis is None or np.array_equal(self.epiphysis, other.epiphysis)


@dataclass(eq=False)
class Dataset:
    records: list[BoneRecord] = field(default_factory=list)
    provenance: str = ""
    seed: int | None = None

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            k = rec.key()
            if k in seen:
                raise DataFormatError(f"duplicate record for subject/bone {k}")
            seen.add(k)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.provenance == other.provenance
            and self.seed == other.seed
            and len(self.records) == len(other.records)
            and all(a == b for a, b in zip(self.records, other.records))
        )


def record_to_json(rec: BoneRecord) -> str:
    obj = {
        "subject_id": rec.subject.subject_id,
        "bone": rec.bone,
        "age_years": rec.subject.age_years,
        "sex": rec.subject.sex,
        "ethnicity": rec.subject.ethnicity,
        "tw_stage": rec.tw_stage,
        "phalanx": [[float(x), float(y)] for x, y in rec.phalanx],
        "epiphysis": None
        if rec.epiphysis is None
        else [[float(x), float(y)] for x, y in rec.epiphysis],
    }
    return json.dumps(obj)


def record_from_json(obj: dict) -> BoneRecord:
    required = ("subject_id", "bone", "age_years", "sex", "ethnicity", "phalanx")
    for key in required:
        if key not in obj:
            raise DataFormatError(f"record is missing required key {key!r}")
    subject = Subject(
        subject_id=obj["subject_id"],
        age_years=float(obj["age_years"]),
        sex=obj["sex"],
        ethnicity=obj["ethnicity"],
    )
    return BoneRecord(
        subject=subject,
        bone=obj["bone"],
        phalanx=np.asarray(obj["phalanx"], dtype=float),
        epiphysis=None
        if obj.get("epiphysis") is None
        else np.asarray(obj["epiphysis"], dtype=float),
        tw_stage=obj.get("tw_stage"),
    )


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if ds.provenance or ds.seed is not None:
            fh.write(json.dumps({"provenance": ds.provenance, "seed": ds.seed}) + "\n")
        for rec in ds.records:
            fh.write(record_to_json(rec) + "\n")


def load_dataset(path) -> Dataset:
    records: list[BoneRecord] = []
    provenance = ""
    seed = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataFormatError(f"{path}:{lineno}: expected a JSON object")
            if lineno == 1 and "subject_id" not in obj and (
                "provenance" in obj or "seed" in obj
            ):
                provenance = obj.get("provenance") or ""
                seed = obj.get("seed")
                continue
            try:
                records.append(record_from_json(obj))
            except DataFormatError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    try:
        return Dataset(records=records, provenance=provenance, seed=seed)
    except DataFormatError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
