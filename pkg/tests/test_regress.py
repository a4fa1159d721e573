import numpy as np
import pytest
from scipy import stats

import bruteforce as bf
from boneage.errors import DataFormatError, InvariantError, NumericError
from boneage.features import extract_features
from boneage.regress import (
    BONES,
    EPIPHYSIS_POOL,
    FUSED_POOL,
    IDENTITY,
    BoneAgeModelBank,
    ModelSpec,
    TransformSpec,
    boxcox_profile,
    design_from_table,
    feature_table,
    fit_model_spec,
    fit_ols,
    fuse_predictions,
    heteroscedasticity_check,
    load_bank,
    loocv_fused,
    normality_tests,
    predict_age,
    prediction_interval,
    save_bank,
    stepwise_aic,
    train_bone_bank,
)
from boneage.synth import config_from_dict, generate


def random_system(rng, n=None, k=None):
    n = n or int(rng.integers(12, 40))
    k = k or int(rng.integers(1, 5))
    X = rng.normal(size=(n, k))
    beta = rng.normal(size=k + 1)
    y = beta[0] + X @ beta[1:] + rng.normal(scale=0.5, size=n)
    return X, y


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(0)
    for _ in range(30):
        X, y = random_system(rng)
        model = fit_ols(X, y)
        coef, fitted, resid, hat = bf.ols_bf(X, y)
        assert model.coef == pytest.approx(coef, abs=1e-8)
        assert model.residuals == pytest.approx(resid, abs=1e-8)
        assert model.leverage == pytest.approx(hat, abs=1e-8)
        assert model.aic == pytest.approx(bf.aic_bf(X, y), abs=1e-8)
        assert float(model.leverage.sum()) == pytest.approx(model.p, abs=1e-8)
        rss = float(resid @ resid)
        tss = float(np.sum((y - y.mean()) ** 2))
        assert model.r2 == pytest.approx(1 - rss / tss, abs=1e-10)


def test_loo_residuals_equal_literal_refits():
    rng = np.random.default_rng(1)
    for _ in range(10):
        X, y = random_system(rng, n=20, k=2)
        model = fit_ols(X, y)
        assert model.loo_residuals == pytest.approx(bf.press_by_refit(X, y), abs=1e-8)


def test_ols_rejects_collinear_and_underdetermined():
    rng = np.random.default_rng(2)
    x = rng.normal(size=12)
    X = np.column_stack([x, 2.0 * x])
    with pytest.raises(NumericError, match="collinear"):
        fit_ols(X, rng.normal(size=12), names=["a", "b"])
    with pytest.raises(NumericError, match="more rows"):
        fit_ols(rng.normal(size=(3, 4)), rng.normal(size=3))
    with pytest.raises(DataFormatError, match="responses"):
        fit_ols(rng.normal(size=(5, 2)), rng.normal(size=4))


def test_transform_roundtrips():
    y = np.array([1.5, 4.0, 9.0, 16.0])
    for spec in (
        IDENTITY,
        TransformSpec(kind="power", lam=0.67),
        TransformSpec(kind="power", lam=0.0),
        TransformSpec(kind="shifted-power", lam=0.5, shift=1.0),
    ):
        assert spec.invert(spec.apply(y)) == pytest.approx(y, rel=1e-12)
    with pytest.raises(InvariantError, match="transform"):
        TransformSpec(kind="boxcox")
    with pytest.raises(NumericError, match="positive"):
        TransformSpec(kind="power", lam=0.5).apply(np.array([-1.0, 2.0]))


def test_boxcox_profile_matches_scipy_llf():
    rng = np.random.default_rng(3)
    y = np.exp(rng.normal(size=60))
    lam_star, profile = boxcox_profile(y)
    for lam, ll in profile[::8]:
        assert ll == pytest.approx(float(stats.boxcox_llf(lam, y)), abs=1e-8)
    # lognormal data wants the log transform
    assert abs(lam_star) <= 0.25
    assert len(profile) == 81  # -2..2 in 0.05 steps


def test_boxcox_profile_keeps_identity_plausible_for_gaussian():
    # far-from-zero Gaussian data has a very flat profile: the argmax moves
    # around, but lambda=1 must stay inside the usual likelihood-ratio region
    rng = np.random.default_rng(4)
    y = rng.normal(loc=20.0, scale=1.0, size=120)
    lam_star, profile = boxcox_profile(y)
    by_lam = dict(profile)
    assert by_lam[lam_star] - by_lam[1.0] < 1.92  # chi2_1(0.95) / 2


def test_boxcox_with_design_and_shift():
    rng = np.random.default_rng(5)
    x = rng.uniform(1, 5, size=80)
    y = (2.0 + 3.0 * x + rng.normal(scale=0.1, size=80)) ** 2 + 7.0
    lam_with_x, _ = boxcox_profile(y, shift=7.0, X=x)
    assert lam_with_x == pytest.approx(0.5, abs=0.15)
    with pytest.raises(NumericError, match="shift"):
        boxcox_profile(y, shift=float(y.max()))
    with pytest.raises(InvariantError, match="grid"):
        boxcox_profile(y, lam_grid=[])


def test_heteroscedasticity_check_directions():
    rng = np.random.default_rng(6)
    x = np.linspace(1.0, 10.0, 150)
    calm = 5.0 + 2.0 * x + rng.normal(scale=0.8, size=150)
    fanned = 5.0 + 2.0 * x + rng.normal(size=150) * (0.2 * (5.0 + 2.0 * x))
    res_calm = heteroscedasticity_check(fit_ols(x, calm))
    res_fan = heteroscedasticity_check(fit_ols(x, fanned))
    assert res_calm.p_value > 0.05
    assert res_fan.p_value < 0.01 and res_fan.r > 0.0


def test_heteroscedasticity_matches_pearson():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 4, size=40)
    y = 1.0 + x + rng.normal(scale=0.3, size=40)
    model = fit_ols(x, y)
    got = heteroscedasticity_check(model)
    r, p = stats.pearsonr(np.abs(model.std_residuals), model.response)
    assert got.r == pytest.approx(float(r), abs=1e-10)
    assert got.p_value == pytest.approx(float(p), abs=1e-10)


def test_normality_tests_agree_with_scipy():
    rng = np.random.default_rng(8)
    x = rng.normal(size=50)
    res = normality_tests(x)
    assert res.shapiro_p > 0.01
    jb_stat, jb_p = stats.jarque_bera(x)
    assert res.jarque_bera == pytest.approx(float(jb_stat), abs=1e-10)
    assert res.jarque_bera_p == pytest.approx(float(jb_p), abs=1e-10)
    skewed = np.exp(rng.normal(size=200))
    bad = normality_tests(skewed)
    assert bad.shapiro_p < 1e-6 and bad.jarque_bera_p < 1e-6
    assert bad.dagostino_p < 1e-6


def test_normality_tests_size_limits():
    with pytest.raises(InvariantError, match="at least 3"):
        normality_tests([1.0, 2.0])
    with pytest.raises(InvariantError, match="at least 8"):
        normality_tests([1.0, 2.0, 3.0, 2.5])
    res = normality_tests([1.0, 2.0, 3.0, 2.5], include_dagostino=False)
    assert res.dagostino_z is None and res.dagostino_p is None


def stepwise_table(rng, n=60):
    cols = {f"x{i}": rng.normal(size=n) for i in range(1, 6)}
    return cols


def test_stepwise_matches_greedy_oracle_mains_only():
    for seed in range(8):
        rng = np.random.default_rng(100 + seed)
        table = stepwise_table(rng)
        y = (
            2.0
            + 1.5 * table["x1"]
            - 2.0 * table["x3"]
            + 0.6 * table["x4"]
            + rng.normal(scale=0.4, size=60)
        )
        names = [f"x{i}" for i in range(1, 6)]
        model = stepwise_aic(table, y, names, include_interactions=False)
        want = bf.forward_stepwise_bf(table, y, names)
        assert model.spec.main_terms == want


def test_stepwise_recovers_interaction_with_heredity():
    rng = np.random.default_rng(42)
    table = stepwise_table(rng, n=80)
    y = 1.0 + 2.0 * table["x1"] + 3.0 * table["x1"] * table["x2"] + rng.normal(
        scale=0.3, size=80
    )
    model = stepwise_aic(table, y, [f"x{i}" for i in range(1, 6)])
    assert "x1" in model.spec.main_terms
    assert ("x1", "x2") in model.spec.interaction_terms
    # every interaction must have a selected parent
    selected = set(model.spec.main_terms) | set(model.spec.factor_terms)
    for a, b in model.spec.interaction_terms:
        assert a in selected or b in selected


def test_stepwise_keeps_intercept_only_on_noise():
    rng = np.random.default_rng(11)
    table = stepwise_table(rng, n=40)
    y = rng.normal(size=40)  # no structure at all
    model = stepwise_aic(table, y, [f"x{i}" for i in range(1, 6)])
    assert len(model.spec.term_names) <= 1


def test_factor_candidates_enter_the_model():
    rng = np.random.default_rng(12)
    n = 100
    table = stepwise_table(rng, n=n)
    table["sex_f"] = (rng.random(n) < 0.5).astype(float)
    y = 3.0 + 1.0 * table["x2"] + 2.5 * table["sex_f"] + rng.normal(scale=0.3, size=n)
    model = stepwise_aic(
        table, y, [f"x{i}" for i in range(1, 6)], factor_candidates=["sex_f"]
    )
    assert "sex_f" in model.spec.factor_terms
    assert "x2" in model.spec.main_terms


def test_design_interactions_are_products():
    table = {"a": np.array([1.0, 2.0]), "b": np.array([3.0, 5.0])}
    spec = ModelSpec(main_terms=("a",), interaction_terms=(("a", "b"),))
    Z, names = design_from_table(table, spec)
    assert names == ["(intercept)", "a", "a:b"]
    assert Z[:, 2] == pytest.approx([3.0, 10.0])
    with pytest.raises(DataFormatError, match="missing"):
        design_from_table({"a": np.ones(2)}, spec)


def test_fusion_examples():
    fused, kept, flags = fuse_predictions([5.0, 5.5, 9.0])
    assert fused == 5.25 and kept == [0, 1] and flags == ["outlier_discarded"]
    fused, kept, flags = fuse_predictions([5.0, 8.0])
    assert fused == 6.5 and kept == [0, 1]
    assert flags == ["discordant_predictions"]
    fused, kept, flags = fuse_predictions([4.0, 6.1, 8.2])
    assert fused == pytest.approx(6.1) and kept == [0, 1, 2]
    assert flags == ["discordant_predictions"]


def test_fusion_edges():
    assert fuse_predictions([7.3]) == (7.3, [0], [])
    fused, kept, flags = fuse_predictions([4.0, 6.0])  # gap exactly 2 is concordant
    assert fused == 5.0 and kept == [0, 1] and flags == []
    fused, kept, flags = fuse_predictions([5.0, 5.1, 5.2])
    assert fused == pytest.approx(5.1) and flags == []
    with pytest.raises(InvariantError):
        fuse_predictions([])


@pytest.fixture(scope="module")
def small_bank():
    cfg = config_from_dict({"age_noise_sd": 0.2, "coord_noise_sd": 0.1})
    ds = generate(80, seed=19, config=cfg)
    rows = [extract_features(r) for r in ds]
    return train_bone_bank(rows, use_factors="none"), rows, ds


def test_bank_has_six_strata(small_bank):
    bank, rows, _ = small_bank
    assert set(bank.models) == {(b, e) for b in BONES for e in (True, False)}
    for (bone, epi), model in bank.models.items():
        assert model.transform.kind == ("power" if epi else "identity")
        if epi:
            assert model.transform.lam == pytest.approx(0.67)
        pool = EPIPHYSIS_POOL if epi else FUSED_POOL
        for term in model.spec.main_terms:
            assert term in pool


def test_bank_predictions_track_age(small_bank):
    bank, rows, ds = small_bank
    by_sid = {}
    for r in rows:
        by_sid.setdefault(r.subject_id, {})[r.bone] = r
    errs = []
    for rec in ds.records[::3]:
        sid = rec.subject.subject_id
        pred = predict_age(bank, by_sid[sid])
        assert set(pred.per_bone) == set(BONES)
        errs.append(pred.fused - rec.subject.age_years)
        for bone, itv in pred.intervals.items():
            assert itv.lo <= pred.per_bone[bone] <= itv.hi
    rmse = float(np.sqrt(np.mean(np.square(errs))))
    assert rmse < 1.0


def test_loocv_covers_every_subject(small_bank):
    bank, rows, ds = small_bank
    out = loocv_fused(bank)
    assert len(out) == 80
    assert [sid for sid, _, _ in out] == sorted({r.subject_id for r in rows})
    rmse = float(np.sqrt(np.mean([(t - p) ** 2 for _, t, p in out])))
    assert rmse < 1.0


def test_bank_roundtrip(small_bank, tmp_path):
    bank, rows, _ = small_bank
    path = tmp_path / "bank.json"
    save_bank(bank, path)
    back = load_bank(path)
    assert back.use_factors == bank.use_factors
    assert set(back.models) == set(bank.models)
    for key, model in bank.models.items():
        assert back.models[key].coef == pytest.approx(model.coef, abs=0)
        assert back.models[key].names == model.names
    by_sid = {}
    for r in rows:
        by_sid.setdefault(r.subject_id, {})[r.bone] = r
    probe = next(iter(by_sid.values()))
    a = predict_age(bank, probe)
    b = predict_age(back, probe)
    assert a.fused == pytest.approx(b.fused, abs=0)
    assert a.flags == b.flags


def test_bank_insufficient_data():
    ds = generate(3, seed=2)
    rows = [extract_features(r) for r in ds]
    with pytest.raises(InvariantError, match="insufficient data"):
        train_bone_bank(rows)


def test_model_for_unknown_key():
    bank = BoneAgeModelBank(models={})
    with pytest.raises(InvariantError, match="no model"):
        bank.model_for("distal", True)


def test_prediction_interval_properties():
    rng = np.random.default_rng(13)
    x = rng.uniform(0, 10, size=50)
    y = 4.0 + 2.0 * x + rng.normal(scale=0.5, size=50)
    model = fit_model_spec({"f2": x}, y, ModelSpec(main_terms=("f2",)))
    inside = prediction_interval(model, {"f2": 5.0}, level=0.95)
    assert inside.lo < inside.point < inside.hi
    assert not inside.extrapolated
    assert inside.point == pytest.approx(14.0, abs=0.5)
    narrow = prediction_interval(model, {"f2": 5.0}, level=0.5)
    assert (narrow.hi - narrow.lo) < (inside.hi - inside.lo)
    degenerate = prediction_interval(model, {"f2": 5.0}, level=0.0)
    assert degenerate.lo == degenerate.hi == degenerate.point
    outside = prediction_interval(model, {"f2": 99.0}, level=0.95)
    assert outside.extrapolated
    with pytest.raises(InvariantError, match="level"):
        prediction_interval(model, {"f2": 5.0}, level=1.5)


def test_feature_table_dummies():
    ds = generate(12, seed=23)
    rows = [extract_features(r) for r in ds]
    table = feature_table(rows)
    assert set(table) == set(f"f{i}" for i in range(1, 26)) | {
        "sex_f",
        "eth_asi",
        "eth_blk",
        "eth_his",
    }
    for i, r in enumerate(rows):
        assert table["sex_f"][i] == (1.0 if r.sex == "F" else 0.0)
        dummies = table["eth_asi"][i] + table["eth_blk"][i] + table["eth_his"][i]
        assert dummies == (0.0 if r.ethnicity == "CAU" else 1.0)
