"""Parametric generator of synthetic hand-bone outlines.

Each subject gets a latent maturity in [0, 1] per bone, driven by a noisy
copy of chronological age. Maturity sets the phalanx size, the epiphysis
width ratio and the epiphysis-to-metaphysis gap, and the ossification stage
falls out of fixed maturity thresholds. Stage I (and a configurable share of
stage H) has a fused, hence absent, epiphysis. Everything is a pure function
of (n, seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import AGE_RANGE, BONES, ETHNICITIES, SEXES, STAGES, BoneRecord, Dataset, Subject
from .errors import InvariantError
from .geometry import rotate_points

_EVEN_THRESHOLDS = tuple((i + 1) / 8.0 for i in range(7))


@dataclass(frozen=True)
class GeneratorConfig:
    phalanx_points: int = 128
    epiphysis_points: int = 64
    age_low: float = AGE_RANGE[0]
    age_high: float = AGE_RANGE[1]
    age_noise_sd: float = 0.5
    coord_noise_sd: float = 0.5
    stage_thresholds: tuple[float, ...] = _EVEN_THRESHOLDS
    fused_h_fraction: float = 0.5
    sex_age_offset: float = 0.0
    ethnicity_age_offsets: dict = field(default_factory=dict)
    phalanx_height_base: float = 55.0
    phalanx_height_gain: float = 65.0
    phalanx_width_base: float = 22.0
    phalanx_width_gain: float = 10.0
    taper: float = 0.12
    bone_scales: tuple[float, float, float] = (0.8, 1.0, 1.2)
    epi_ratio_min: float = 0.35
    epi_ratio_max: float = 1.05
    epi_aspect: float = 0.55
    gap_base: float = 8.0
    gap_min: float = 1.5
    rotation_max_deg: float = 25.0
    center_low: float = 150.0
    center_high: float = 350.0

    def validate(self) -> None:
        if self.phalanx_points < 8 or self.epiphysis_points < 8:
            raise InvariantError("outline point densities must be at least 8")
        if not (self.age_low > 0.0 and self.age_high > self.age_low):
            raise InvariantError("age range must satisfy 0 < low < high")
        if self.age_noise_sd < 0.0 or self.coord_noise_sd < 0.0:
            raise InvariantError("noise standard deviations must be non-negative")
        th = self.stage_thresholds
        if len(th) != len(STAGES) - 1 or any(
            not (0.0 < a < 1.0) for a in th
        ) or any(b <= a for a, b in zip(th, th[1:])):
            raise InvariantError(
                "stage thresholds must be strictly increasing values inside (0, 1), one per stage boundary"
            )
        if not (0.0 <= self.fused_h_fraction <= 1.0):
            raise InvariantError("fused_h_fraction must lie in [0, 1]")
        for name in (
            "phalanx_height_base",
            "phalanx_height_gain",
            "phalanx_width_base",
            "epi_ratio_min",
            "epi_aspect",
            "gap_base",
            "gap_min",
        ):
            if getattr(self, name) <= 0.0:
                raise InvariantError(f"{name} must be positive")
        if self.epi_ratio_max <= self.epi_ratio_min:
            raise InvariantError("epi_ratio_max must exceed epi_ratio_min")
        unknown = set(self.ethnicity_age_offsets) - set(ETHNICITIES)
        if unknown:
            raise InvariantError(f"age offsets for unknown ethnicities: {sorted(unknown)}")


def config_from_dict(obj: dict) -> GeneratorConfig:
    cfg = GeneratorConfig()
    known = set(cfg.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise InvariantError(f"unknown generator config keys: {sorted(unknown)}")
    if "stage_thresholds" in obj:
        obj = dict(obj, stage_thresholds=tuple(obj["stage_thresholds"]))
    if "bone_scales" in obj:
        obj = dict(obj, bone_scales=tuple(obj["bone_scales"]))
    cfg = replace(cfg, **obj)
    cfg.validate()
    return cfg


def _stage_for(m: float, thresholds) -> str:
    return STAGES[int(np.searchsorted(np.asarray(thresholds), m, side="right"))]


def _superellipse(width: float, height: float, count: int, taper: float) -> np.ndarray:
    """Rounded-rectangle phalanx cross-section: |2x/W|^4 + |2y/H|^4 = 1,
    with the +y (metaphysis) end widened by the taper factor."""
    theta = 2.0 * np.pi * np.arange(count) / count
    cx, sy = np.cos(theta), np.sin(theta)
    x = 0.5 * width * np.sign(cx) * np.abs(cx) ** 0.5
    y = 0.5 * height * np.sign(sy) * np.abs(sy) ** 0.5
    x = x * (1.0 + taper * (y / height))
    return np.column_stack([x, y])


def _ellipse(width: float, height: float, count: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(count) / count
    return np.column_stack([0.5 * width * np.cos(theta), 0.5 * height * np.sin(theta)])


def generate(n_subjects: int, seed: int, config: GeneratorConfig | None = None) -> Dataset:
    """Draw `n_subjects` subjects, three bones each, into a Dataset."""
    cfg = config or GeneratorConfig()
    cfg.validate()
    if n_subjects < 0:
        raise InvariantError("n_subjects must be non-negative")
    rng = np.random.default_rng(seed)
    cap = cfg.stage_thresholds[STAGES.index("G")]  # ratio growth stops at the G/H boundary
    span = cfg.age_high - cfg.age_low
    records = []
    for i in range(n_subjects):
        sid = f"S{i + 1:05d}"
        age = float(rng.uniform(cfg.age_low, cfg.age_high))
        sex = SEXES[int(rng.integers(len(SEXES)))]
        ethnicity = ETHNICITIES[int(rng.integers(len(ETHNICITIES)))]
        subject = Subject(sid, age, sex, ethnicity)
        shift = (cfg.sex_age_offset if sex == "F" else 0.0) + cfg.ethnicity_age_offsets.get(
            ethnicity, 0.0
        )
        for bone, scale in zip(BONES, cfg.bone_scales):
            eff = age + shift + float(rng.normal(0.0, cfg.age_noise_sd))
            m = float(np.clip((eff - cfg.age_low) / span, 0.0, 1.0))
            stage = _stage_for(m, cfg.stage_thresholds)
            if stage == "I":
                epi_present = False
            elif stage == "H":
                epi_present = bool(rng.random() >= cfg.fused_h_fraction)
            else:
                epi_present = True

            height = scale * (cfg.phalanx_height_base + cfg.phalanx_height_gain * m)
            width = scale * (cfg.phalanx_width_base + cfg.phalanx_width_gain * m)
            phalanx = _superellipse(width, height, cfg.phalanx_points, cfg.taper)

            epiphysis = None
            if epi_present:
                ratio = cfg.epi_ratio_min + (cfg.epi_ratio_max - cfg.epi_ratio_min) * min(
                    m / cap, 1.0
                )
                epi_w = ratio * width
                epi_h = cfg.epi_aspect * epi_w
                gap = cfg.gap_min + cfg.gap_base * (1.0 - m)
                center_y = 0.5 * height + gap + 0.5 * epi_h
                epiphysis = _ellipse(epi_w, epi_h, cfg.epiphysis_points) + [0.0, center_y]

            angle = float(rng.uniform(-1.0, 1.0)) * np.deg2rad(cfg.rotation_max_deg)
            offset = rng.uniform(cfg.center_low, cfg.center_high, size=2)
            phalanx = rotate_points(phalanx, angle) + offset
            if epiphysis is not None:
                epiphysis = rotate_points(epiphysis, angle) + offset
            if cfg.coord_noise_sd > 0.0:
                phalanx = phalanx + rng.normal(0.0, cfg.coord_noise_sd, phalanx.shape)
                if epiphysis is not None:
                    epiphysis = epiphysis + rng.normal(0.0, cfg.coord_noise_sd, epiphysis.shape)

            records.append(
                BoneRecord(
                    subject=subject,
                    bone=bone,
                    phalanx=phalanx,
                    epiphysis=epiphysis,
                    tw_stage=stage,
                )
            )
    return Dataset(
        records=records,
        provenance=f"synthetic n={n_subjects} seed={seed}",
        seed=seed,
    )
