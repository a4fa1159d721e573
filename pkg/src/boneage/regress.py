"""Linear modelling of bone age: least squares with influence diagnostics,
Box-Cox profiling, forward stepwise selection by AIC, the six-model
per-bone bank, prediction fusion, and t-based prediction intervals.

Responses may be transformed before fitting (age^0.67 for the models of
bones with an unfused epiphysis); predictions are mapped back through the
inverse transform. Diagnostics (standardized residuals, leverage, Cook's
distance, heteroscedasticity and normality checks) describe the transformed
fit. Flagged points are reported, never removed automatically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import qr as scipy_qr
from scipy.linalg import solve_triangular

from .core import BONES
from .errors import DataFormatError, InvariantError, NumericError
from .features import FEATURE_NAMES, ShapeFeatures

INTERCEPT = "(intercept)"
FACTOR_NAMES = ("sex_f", "eth_asi", "eth_blk", "eth_his")
_FACTOR_OF_ETH = {"ASI": "eth_asi", "BLK": "eth_blk", "HIS": "eth_his"}
FUSION_GAP_YEARS = 2.0
EPIPHYSIS_POWER = 0.67

COOK_FLAG_FACTOR = 4.0  # flag Cook's distance above 4/n
STD_RESID_FLAG = 2.5


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "identity"  # identity | power | shifted-power
    lam: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "power", "shifted-power"):
            raise InvariantError(f"unknown transform kind {self.kind!r}")

    def apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "identity":
            return y
        z = y - self.shift if self.kind == "shifted-power" else y
        if np.any(z <= 0.0):
            raise NumericError(
                f"transform {self.kind}(lam={self.lam}, shift={self.shift}) needs a "
                "positive shifted response"
            )
        if self.lam == 0.0:
            return np.log(z)
        return z**self.lam

    def invert(self, t):
        t = np.asarray(t, dtype=float)
        shift = self.shift if self.kind == "shifted-power" else 0.0
        if self.kind == "identity":
            out = t
        elif self.lam == 0.0:
            out = np.exp(t) + shift
        else:
            out = np.where(t > 0.0, np.maximum(t, 0.0) ** (1.0 / self.lam), 0.0) + shift
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lam": self.lam, "shift": self.shift}

    @classmethod
    def from_dict(cls, obj: dict):
        return cls(kind=obj["kind"], lam=float(obj["lam"]), shift=float(obj["shift"]))


IDENTITY = TransformSpec()


@dataclass(frozen=True)
class ModelSpec:
    main_terms: tuple[str, ...] = ()
    interaction_terms: tuple[tuple[str, str], ...] = ()
    factor_terms: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "main_terms", tuple(self.main_terms))
        object.__setattr__(
            self, "interaction_terms", tuple(tuple(p) for p in self.interaction_terms)
        )
        object.__setattr__(self, "factor_terms", tuple(self.factor_terms))
        for pair in self.interaction_terms:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise InvariantError(f"malformed interaction pair {pair!r}")

    @property
    def term_names(self) -> list[str]:
        return (
            list(self.main_terms)
            + list(self.factor_terms)
            + [f"{a}:{b}" for a, b in self.interaction_terms]
        )

    def to_dict(self) -> dict:
        return {
            "main_terms": list(self.main_terms),
            "interaction_terms": [list(p) for p in self.interaction_terms],
            "factor_terms": list(self.factor_terms),
        }

    @classmethod
    def from_dict(cls, obj: dict):
        return cls(
            main_terms=tuple(obj["main_terms"]),
            interaction_terms=tuple(tuple(p) for p in obj["interaction_terms"]),
            factor_terms=tuple(obj["factor_terms"]),
        )


def design_from_table(table: dict, spec: ModelSpec, n: int | None = None):
    """Design matrix with intercept for the spec's terms. Interaction
    columns are plain products of their parent columns."""
    if n is None:
        if not table:
            raise DataFormatError("empty design table")
        n = len(next(iter(table.values())))
    cols = [np.ones(n)]
    names = [INTERCEPT]
    for t in _require_terms(table, spec.main_terms):
        cols.append(np.asarray(table[t], dtype=float))
        names.append(t)
    for t in _require_terms(table, spec.factor_terms):
        cols.append(np.asarray(table[t], dtype=float))
        names.append(t)
    for a, b in spec.interaction_terms:
        for t in (a, b):
            if t not in table:
                raise DataFormatError(f"interaction parent {t!r} missing from the table")
        cols.append(np.asarray(table[a], dtype=float) * np.asarray(table[b], dtype=float))
        names.append(f"{a}:{b}")
    return np.column_stack(cols), names


def _require_terms(table: dict, terms):
    for t in terms:
        if t not in table:
            raise DataFormatError(f"term {t!r} missing from the table")
    return terms


@dataclass
class FittedLinearModel:
    names: list[str]
    coef: np.ndarray
    n: int
    p: int
    residuals: np.ndarray
    std_residuals: np.ndarray
    leverage: np.ndarray
    cooks: np.ndarray
    sigma2: float
    r2: float
    aic: float
    transform: TransformSpec = IDENTITY
    spec: ModelSpec | None = None
    cov_unscaled: np.ndarray | None = None
    col_mins: np.ndarray | None = None
    col_maxs: np.ndarray | None = None
    response: np.ndarray | None = None

    @property
    def loo_residuals(self) -> np.ndarray:
        """Leave-one-out prediction residuals by the e/(1-h) identity."""
        return self.residuals / (1.0 - self.leverage)

    def predict_transformed(self, Z: np.ndarray) -> np.ndarray:
        return Z @ self.coef

    def predict_table(self, table: dict) -> np.ndarray:
        if self.spec is None:
            raise InvariantError("model has no term spec; predict with a design matrix")
        Z, _ = design_from_table(table, self.spec)
        return self.transform.invert(self.predict_transformed(Z))

    def flagged_points(self) -> list[int]:
        """Indices whose Cook's distance exceeds 4/n or |standardized
        residual| exceeds 2.5."""
        mask = (self.cooks > COOK_FLAG_FACTOR / self.n) | (
            np.abs(self.std_residuals) > STD_RESID_FLAG
        )
        return [int(i) for i in np.where(mask)[0]]

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coef": self.coef.tolist(),
            "n": self.n,
            "p": self.p,
            "sigma2": self.sigma2,
            "r2": self.r2,
            "aic": self.aic,
            "transform": self.transform.to_dict(),
            "spec": None if self.spec is None else self.spec.to_dict(),
            "cov_unscaled": None if self.cov_unscaled is None else self.cov_unscaled.tolist(),
            "col_mins": None if self.col_mins is None else self.col_mins.tolist(),
            "col_maxs": None if self.col_maxs is None else self.col_maxs.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict):
        p = len(obj["coef"])
        return cls(
            names=list(obj["names"]),
            coef=np.asarray(obj["coef"], dtype=float),
            n=int(obj["n"]),
            p=p,
            residuals=np.zeros(0),
            std_residuals=np.zeros(0),
            leverage=np.zeros(0),
            cooks=np.zeros(0),
            sigma2=float(obj["sigma2"]),
            r2=float(obj["r2"]),
            aic=float(obj["aic"]),
            transform=TransformSpec.from_dict(obj["transform"]),
            spec=None if obj["spec"] is None else ModelSpec.from_dict(obj["spec"]),
            cov_unscaled=None
            if obj["cov_unscaled"] is None
            else np.asarray(obj["cov_unscaled"], dtype=float),
            col_mins=None if obj["col_mins"] is None else np.asarray(obj["col_mins"]),
            col_maxs=None if obj["col_maxs"] is None else np.asarray(obj["col_maxs"]),
        )


def fit_ols(
    X,
    y,
    names: list[str] | None = None,
    transform: TransformSpec = IDENTITY,
    spec: ModelSpec | None = None,
) -> FittedLinearModel:
    """Least squares through a pivoted orthogonal factorization.

    X excludes the intercept; one is prepended. Raises NumericError naming
    the first collinear column on rank deficiency, and requires n > p.
    AIC = n*ln(RSS/n) + 2(p+1).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.size == 0:
        X = X.reshape(len(y), 0)
    y = np.asarray(y, dtype=float)
    if len(X) != len(y):
        raise DataFormatError(f"{len(X)} rows but {len(y)} responses")
    t = transform.apply(y)
    n, k = X.shape
    Z = np.column_stack([np.ones(n), X])
    if names is None:
        names = [INTERCEPT] + [f"x{i + 1}" for i in range(k)]
    elif len(names) == k:
        names = [INTERCEPT] + list(names)
    elif len(names) != k + 1:
        raise DataFormatError(f"{k} data columns but {len(names)} names")
    p = k + 1
    if n <= p:
        raise NumericError(f"need more rows than parameters: n={n}, p={p}")
    Q, R, piv = scipy_qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = (diag.max() if diag.size else 0.0) * max(n, p) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    if rank < p:
        bad = names[piv[rank]]
        raise NumericError(f"rank-deficient design: column {bad!r} is collinear")
    coef_piv = solve_triangular(R, Q.T @ t)
    coef = np.empty(p)
    coef[piv] = coef_piv
    fitted = Z @ coef
    resid = t - fitted
    h = np.minimum(np.sum(Q * Q, axis=1), 1.0)
    rss = float(resid @ resid)
    sigma2 = rss / (n - p)
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = np.sqrt(sigma2 * np.maximum(1.0 - h, 1e-300))
        std = np.where(denom > 0.0, resid / denom, 0.0)
        cooks = np.where(
            sigma2 > 0.0,
            (resid**2 * h) / (p * sigma2 * np.maximum(1.0 - h, 1e-300) ** 2),
            0.0,
        )
    tss = float(np.sum((t - t.mean()) ** 2))
    if tss > 0.0:
        r2 = 1.0 - rss / tss
    else:
        r2 = 1.0 if rss <= 1e-300 else 0.0
    aic = n * math.log(max(rss, 1e-300) / n) + 2.0 * (p + 1)
    rinv = solve_triangular(R, np.eye(p))
    cov_piv = rinv @ rinv.T
    cov = np.empty((p, p))
    cov[np.ix_(piv, piv)] = cov_piv
    return FittedLinearModel(
        names=list(names),
        coef=coef,
        n=n,
        p=p,
        residuals=resid,
        std_residuals=std,
        leverage=h,
        cooks=cooks,
        sigma2=sigma2,
        r2=r2,
        aic=aic,
        transform=transform,
        spec=spec,
        cov_unscaled=cov,
        col_mins=Z[:, 1:].min(axis=0) if k else np.zeros(0),
        col_maxs=Z[:, 1:].max(axis=0) if k else np.zeros(0),
        response=t,
    )


def fit_model_spec(
    table: dict, y, spec: ModelSpec, transform: TransformSpec = IDENTITY
) -> FittedLinearModel:
    Z, names = design_from_table(table, spec, n=len(np.asarray(y)))
    return fit_ols(Z[:, 1:], y, names=names, transform=transform, spec=spec)


def boxcox_profile(y, shift: float = 0.0, lam_grid=None, X=None):
    """Profile log-likelihood of the Box-Cox transform of (y - shift) under
    a linear model (intercept only unless a design X is given). Returns
    (lam_star, [(lam, loglik), ...]); lam_star is the grid argmax."""
    y = np.asarray(y, dtype=float)
    z = y - shift
    if np.any(z <= 0.0):
        raise NumericError(f"Box-Cox needs y - shift > 0 (shift={shift})")
    if lam_grid is None:
        lam_grid = np.round(np.arange(-2.0, 2.0001, 0.05), 10)
    lam_grid = list(np.asarray(lam_grid, dtype=float))
    if not lam_grid:
        raise InvariantError("empty Box-Cox grid")
    n = len(z)
    if X is None:
        Xd = np.zeros((n, 0))
    else:
        Xd = np.asarray(X, dtype=float)
        if Xd.ndim == 1:
            Xd = Xd[:, None]
    logz_sum = float(np.sum(np.log(z)))
    profile = []
    for lam in lam_grid:
        w = np.log(z) if lam == 0.0 else (z**lam - 1.0) / lam
        model = fit_ols(Xd, w)
        rss = max(float(model.residuals @ model.residuals), 1e-300)
        ll = -0.5 * n * math.log(rss / n) + (lam - 1.0) * logz_sum
        profile.append((float(lam), float(ll)))
    best = max(range(len(profile)), key=lambda i: profile[i][1])
    return profile[best][0], profile


@dataclass(frozen=True)
class HeteroscedasticityResult:
    r: float
    p_value: float


def heteroscedasticity_check(model: FittedLinearModel) -> HeteroscedasticityResult:
    """Pearson correlation between |standardized residual| and the response
    the model was fit to, with a two-sided t-test p-value."""
    a = np.abs(model.std_residuals)
    b = model.response
    if b is None or len(a) != len(b):
        raise InvariantError("model lacks stored residuals/response")
    n = len(a)
    if n < 3 or np.std(a) == 0.0 or np.std(b) == 0.0:
        return HeteroscedasticityResult(r=0.0, p_value=1.0)
    r = float(np.corrcoef(a, b)[0, 1])
    r = max(-1.0, min(1.0, r))
    if abs(r) >= 1.0:
        return HeteroscedasticityResult(r=r, p_value=0.0)
    tstat = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(stats.t.sf(abs(tstat), n - 2))
    return HeteroscedasticityResult(r=r, p_value=min(1.0, p))


@dataclass(frozen=True)
class NormalityResult:
    shapiro_w: float
    shapiro_p: float
    dagostino_z: float | None
    dagostino_p: float | None
    jarque_bera: float
    jarque_bera_p: float


def normality_tests(x, include_dagostino: bool = True) -> NormalityResult:
    """Shapiro-Wilk, the D'Agostino skewness z-test, and Jarque-Bera
    JB = n/6 * (skew^2 + (kurtosis - 3)^2 / 4) on a residual vector."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 3:
        raise InvariantError(f"normality tests need at least 3 values, got {n}")
    w, wp = stats.shapiro(x)
    dz = dp = None
    if include_dagostino:
        if n < 8:
            raise InvariantError(
                f"the D'Agostino skewness test needs at least 8 values, got {n}"
            )
        dz, dp = stats.skewtest(x)
        dz, dp = float(dz), float(dp)
    m = x - x.mean()
    m2 = float(np.mean(m**2))
    if m2 <= 0.0:
        jb, jbp = 0.0, 1.0
    else:
        skew = float(np.mean(m**3)) / m2**1.5
        kurt = float(np.mean(m**4)) / m2**2
        jb = n / 6.0 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)
        jbp = float(stats.chi2.sf(jb, 2))
    return NormalityResult(
        shapiro_w=float(w),
        shapiro_p=float(wp),
        dagostino_z=dz,
        dagostino_p=dp,
        jarque_bera=jb,
        jarque_bera_p=jbp,
    )


def stepwise_aic(
    table: dict,
    y,
    candidates,
    transform: TransformSpec = IDENTITY,
    include_interactions: bool = True,
    factor_candidates=(),
) -> FittedLinearModel:
    """Forward selection from the intercept-only model, adding the single
    term with the largest AIC decrease until none improves.

    Candidates are the unused main effects, unused factor dummies, and,
    when interactions are enabled, pairwise products admissible under the
    heredity rule: at least one parent already selected. Candidate order is
    fixed (mains, factors, then pairs in parent order) and earlier
    candidates win exact ties, so selection is deterministic.
    """
    y = np.asarray(y, dtype=float)
    candidates = list(candidates)
    factor_candidates = list(factor_candidates)
    spec = ModelSpec()
    current = fit_model_spec(table, y, spec, transform)
    while True:
        selected = set(spec.main_terms) | set(spec.factor_terms)
        used_pairs = {frozenset(p) for p in spec.interaction_terms}
        options: list[ModelSpec] = []
        for t in candidates:
            if t not in spec.main_terms:
                options.append(
                    ModelSpec(spec.main_terms + (t,), spec.interaction_terms, spec.factor_terms)
                )
        for t in factor_candidates:
            if t not in spec.factor_terms:
                options.append(
                    ModelSpec(spec.main_terms, spec.interaction_terms, spec.factor_terms + (t,))
                )
        if include_interactions:
            universe = candidates + factor_candidates
            for i, a in enumerate(universe):
                for b in universe[i + 1 :]:
                    if frozenset((a, b)) in used_pairs:
                        continue
                    if a not in selected and b not in selected:
                        continue
                    options.append(
                        ModelSpec(
                            spec.main_terms,
                            spec.interaction_terms + ((a, b),),
                            spec.factor_terms,
                        )
                    )
        best = None
        for cand_spec in options:
            try:
                fitted = fit_model_spec(table, y, cand_spec, transform)
            except NumericError:
                continue
            if fitted.aic < current.aic - 1e-10 and (best is None or fitted.aic < best.aic - 1e-10):
                best = fitted
        if best is None:
            return current
        current = best
        spec = best.spec


@dataclass
class BoneAgeModelBank:
    models: dict[tuple[str, bool], FittedLinearModel]
    use_factors: str = "none"
    loo: dict[tuple[str, bool], list[tuple[str, float, float]]] = field(default_factory=dict)
    # loo rows: (subject_id, true_age, loo_prediction_years)

    def model_for(self, bone: str, epiphysis: bool) -> FittedLinearModel:
        try:
            return self.models[(bone, epiphysis)]
        except KeyError:
            raise InvariantError(
                f"bank has no model for bone={bone!r}, epiphysis={epiphysis}"
            ) from None


def _factor_list(use_factors: str) -> tuple[str, ...]:
    if use_factors == "none":
        return ()
    if use_factors == "sex":
        return ("sex_f",)
    if use_factors == "sex+ethnicity":
        return FACTOR_NAMES
    raise DataFormatError(f"unknown factors mode {use_factors!r}")


def feature_table(rows: list[ShapeFeatures]) -> dict[str, np.ndarray]:
    """Column table of the 25 features plus factor dummies (reference:
    male, Caucasian)."""
    table = {
        name: np.array([r.values[i] for r in rows])
        for i, name in enumerate(FEATURE_NAMES)
    }
    table["sex_f"] = np.array([1.0 if r.sex == "F" else 0.0 for r in rows])
    for eth, col in _FACTOR_OF_ETH.items():
        table[col] = np.array([1.0 if r.ethnicity == eth else 0.0 for r in rows])
    return table

EPIPHYSIS_POOL = tuple(f"f{i}" for i in range(2, 26))
FUSED_POOL = tuple(f"f{i}" for i in range(2, 16))


def train_bone_bank(
    rows: list[ShapeFeatures],
    use_factors: str = "none",
    include_interactions: bool = True,
    power: float = EPIPHYSIS_POWER,
) -> BoneAgeModelBank:
    """Six stepwise-AIC models: one per bone for records with an unfused
    epiphysis (response age^power, features f2-f25) and one per bone for
    fused records (identity response, features f2-f15)."""
    factors = _factor_list(use_factors)
    models: dict[tuple[str, bool], FittedLinearModel] = {}
    loo: dict[tuple[str, bool], list[tuple[str, float, float]]] = {}
    for bone in BONES:
        for epi in (True, False):
            subset = [
                r
                for r in rows
                if r.bone == bone and (r.values[0] == 1.0) == epi
            ]
            if any(r.age_years is None for r in subset):
                raise DataFormatError(
                    f"{bone}/{'epiphysis' if epi else 'fused'}: records without age"
                )
            if len(subset) < 3:
                raise InvariantError(
                    f"insufficient data for bone={bone!r} "
                    f"stratum={'epiphysis' if epi else 'fused'}: {len(subset)} records"
                )
            table = feature_table(subset)
            y = np.array([r.age_years for r in subset])
            transform = (
                TransformSpec(kind="power", lam=power) if epi else IDENTITY
            )
            pool = EPIPHYSIS_POOL if epi else FUSED_POOL
            model = stepwise_aic(
                table,
                y,
                candidates=pool,
                transform=transform,
                include_interactions=include_interactions,
                factor_candidates=factors,
            )
            models[(bone, epi)] = model
            preds_t = model.response - model.loo_residuals
            preds_years = model.transform.invert(preds_t)
            loo[(bone, epi)] = [
                (r.subject_id, float(r.age_years), float(p))
                for r, p in zip(subset, np.atleast_1d(preds_years))
            ]
    return BoneAgeModelBank(models=models, use_factors=use_factors, loo=loo)


def fuse_predictions(preds) -> tuple[float, list[int], list[str]]:
    """Mean of the per-bone predictions after discarding any one that
    differs by more than 2 years from every other; if that discards all of
    them, fall back to the plain mean and flag the disagreement."""
    preds = [float(p) for p in preds]
    if not preds:
        raise InvariantError("fusion needs at least one prediction")
    flags: list[str] = []
    if len(preds) == 1:
        return preds[0], [0], flags
    kept = [
        i
        for i, p in enumerate(preds)
        if any(abs(p - q) <= FUSION_GAP_YEARS for j, q in enumerate(preds) if j != i)
    ]
    if not kept:
        flags.append("discordant_predictions")
        kept = list(range(len(preds)))
    elif len(kept) < len(preds):
        flags.append("outlier_discarded")
    fused = float(np.mean([preds[i] for i in kept]))
    return fused, kept, flags


@dataclass(frozen=True)
class PredictionInterval:
    point: float
    lo: float
    hi: float
    extrapolated: bool


def prediction_interval(
    model: FittedLinearModel, table_row: dict, level: float = 0.95
) -> PredictionInterval:
    """t-based interval for one new observation, mapped back to years.
    Flags extrapolation when any design column leaves its training range."""
    if not (0.0 <= level < 1.0):
        raise InvariantError(f"level must lie in [0, 1), got {level}")
    if model.spec is None or model.cov_unscaled is None:
        raise InvariantError("model lacks a spec/covariance for interval prediction")
    row = {k: np.asarray([v], dtype=float) for k, v in table_row.items()}
    Z, _ = design_from_table(row, model.spec, n=1)
    z = Z[0]
    pred_t = float(z @ model.coef)
    se = math.sqrt(max(model.sigma2 * (1.0 + float(z @ model.cov_unscaled @ z)), 0.0))
    tq = float(stats.t.ppf(0.5 + level / 2.0, model.n - model.p)) if level > 0.0 else 0.0
    lo_t, hi_t = pred_t - tq * se, pred_t + tq * se
    extrapolated = False
    if model.col_mins is not None and len(model.col_mins) == len(z) - 1:
        cols = z[1:]
        extrapolated = bool(
            np.any(cols < model.col_mins - 1e-12) or np.any(cols > model.col_maxs + 1e-12)
        )
    point = float(model.transform.invert(pred_t))
    lo = float(model.transform.invert(lo_t))
    hi = float(model.transform.invert(hi_t))
    return PredictionInterval(point=point, lo=lo, hi=hi, extrapolated=extrapolated)


@dataclass
class AgePrediction:
    per_bone: dict[str, float]
    intervals: dict[str, PredictionInterval]
    fused: float
    flags: list[str]


def predict_age(
    bank: BoneAgeModelBank, feats_by_bone: dict[str, ShapeFeatures], level: float = 0.95
) -> AgePrediction:
    """Route each bone's features to its stratum model, back-transform,
    fuse, and attach intervals and warning flags."""
    if not feats_by_bone:
        raise InvariantError("age prediction needs features for at least one bone")
    per_bone: dict[str, float] = {}
    intervals: dict[str, PredictionInterval] = {}
    flags: list[str] = []
    for bone in BONES:
        feats = feats_by_bone.get(bone)
        if feats is None:
            continue
        model = bank.model_for(bone, feats.values[0] == 1.0)
        row = {name: float(feats.values[i]) for i, name in enumerate(FEATURE_NAMES)}
        row["sex_f"] = 1.0 if feats.sex == "F" else 0.0
        for eth, col in _FACTOR_OF_ETH.items():
            row[col] = 1.0 if feats.ethnicity == eth else 0.0
        itv = prediction_interval(model, row, level)
        per_bone[bone] = itv.point
        intervals[bone] = itv
        if itv.extrapolated:
            flags.append(f"extrapolation:{bone}")
    fused, _, fuse_flags = fuse_predictions(list(per_bone.values()))
    flags.extend(fuse_flags)
    return AgePrediction(per_bone=per_bone, intervals=intervals, fused=fused, flags=flags)


def loocv_fused(bank: BoneAgeModelBank) -> list[tuple[str, float, float]]:
    """Per-subject leave-one-out fused predictions assembled from the
    per-model e/(1-h) shortcut. Rows: (subject_id, true_age, fused)."""
    by_subject: dict[str, tuple[float, list[float]]] = {}
    for rows in bank.loo.values():
        for sid, true_age, pred in rows:
            entry = by_subject.setdefault(sid, (true_age, []))
            entry[1].append(pred)
    out = []
    for sid, (true_age, preds) in sorted(by_subject.items()):
        fused, _, _ = fuse_predictions(preds)
        out.append((sid, true_age, fused))
    return out


_KEY_NAMES = {(b, e): f"{b}_{'epiphysis' if e else 'fused'}" for b in BONES for e in (True, False)}
_NAME_KEYS = {v: k for k, v in _KEY_NAMES.items()}


def save_bank(bank: BoneAgeModelBank, path) -> None:
    obj = {
        "use_factors": bank.use_factors,
        "models": {
            _KEY_NAMES[key]: model.to_dict() for key, model in bank.models.items()
        },
        "loo": {
            _KEY_NAMES[key]: [[sid, t, p] for sid, t, p in rows]
            for key, rows in bank.loo.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def load_bank(path) -> BoneAgeModelBank:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        models = {
            _NAME_KEYS[name]: FittedLinearModel.from_dict(m)
            for name, m in obj["models"].items()
        }
        loo = {
            _NAME_KEYS[name]: [(sid, float(t), float(p)) for sid, t, p in rows]
            for name, rows in obj.get("loo", {}).items()
        }
        return BoneAgeModelBank(models=models, use_factors=obj["use_factors"], loo=loo)
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: malformed model bank ({exc})") from None
