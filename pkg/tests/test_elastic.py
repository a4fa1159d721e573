import json

import numpy as np
import pytest

import bruteforce as bf
from boneage.elastic import (
    ENSEMBLE_KINDS,
    MEASURE_KINDS,
    default_grids,
    elastic_distance,
    ensemble_cv_accuracy,
    ensemble_cv_predictions,
    load_elastic,
    measure,
    predict_elastic,
    save_elastic,
    train_elastic_ensemble,
)
from boneage.errors import DataFormatError, InvariantError
from boneage.outline import RadialSeries

A = [1.0, 2.0, 3.0]
B = [1.0, 3.0, 3.0]


def test_frozen_toy_values():
    # hand-checked against independent path enumeration
    assert elastic_distance(measure("euclidean"), A, B) == 1.0
    assert elastic_distance(measure("dtw", window=1.0), A, B) == 1.0
    assert elastic_distance(measure("wdtw", g=0.05), A, B) == pytest.approx(
        0.4812587841214648, abs=1e-15
    )
    assert elastic_distance(
        measure("lcss", epsilon=0.5, band=1.0), [1.0, 2.0, 3.0], [1.0, 2.0, 4.0]
    ) == pytest.approx(1 / 3, abs=1e-12)
    assert elastic_distance(measure("erp", g=0.0, band=1.0), [1.0, 2.0], [2.0, 2.0]) == 1.0
    assert elastic_distance(measure("twed", nu=0.001, **{"lambda": 1.0}), A, B) == 2.0
    assert elastic_distance(measure("msm", c=1.0), A, B) == 1.0


def test_euclidean_is_sum_of_squares_without_root():
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([2.0, 0.0, 1.0])
    assert elastic_distance(measure("euclidean"), a, b) == 5.0


def test_identity_of_indiscernibles():
    rng = np.random.default_rng(0)
    x = rng.normal(size=12)
    for kind in MEASURE_KINDS:
        assert elastic_distance(measure(kind), x, x) == pytest.approx(0.0, abs=1e-12)


def test_symmetry():
    rng = np.random.default_rng(1)
    for kind in MEASURE_KINDS:
        for _ in range(5):
            a = rng.normal(size=9)
            b = rng.normal(size=9)
            d_ab = elastic_distance(measure(kind), a, b)
            d_ba = elastic_distance(measure(kind), b, a)
            assert d_ab == pytest.approx(d_ba, rel=1e-12, abs=1e-12)


def _oracle(kind, params, a, b):
    n = len(a)
    if kind == "euclidean":
        return bf.euclidean_bf(a, b)
    if kind == "dtw":
        return bf.dtw_bf(a, b, bf.band_cells(params.get("window", 1.0), n))
    if kind == "wdtw":
        return bf.wdtw_bf(a, b, params.get("g", 0.05))
    if kind == "lcss":
        return bf.lcss_bf(
            a, b, params.get("epsilon", 0.1), bf.band_cells(params.get("band", 1.0), n)
        )
    if kind == "erp":
        return bf.erp_bf(
            a, b, params.get("g", 0.0), bf.band_cells(params.get("band", 1.0), n)
        )
    if kind == "twed":
        return bf.twed_bf(a, b, params.get("nu", 1e-3), params.get("lambda", 1.0))
    if kind == "msm":
        return bf.msm_bf(a, b, params.get("c", 1.0))
    raise AssertionError(kind)


PARAM_DRAWS = {
    "euclidean": lambda rng: {},
    "dtw": lambda rng: {"window": float(rng.choice([0.0, 0.2, 0.5, 1.0]))},
    "wdtw": lambda rng: {"g": float(rng.choice([0.0, 0.05, 0.3, 1.0]))},
    "lcss": lambda rng: {
        "epsilon": float(rng.uniform(0.05, 1.5)),
        "band": float(rng.choice([0.2, 0.5, 1.0])),
    },
    "erp": lambda rng: {
        "g": float(rng.uniform(-1.0, 1.0)),
        "band": float(rng.choice([0.2, 0.5, 1.0])),
    },
    "twed": lambda rng: {
        "nu": float(rng.choice([1e-4, 1e-2, 1.0])),
        "lambda": float(rng.choice([0.0, 0.5, 1.0])),
    },
    "msm": lambda rng: {"c": float(rng.choice([0.01, 0.1, 1.0, 10.0]))},
}


@pytest.mark.parametrize("kind", MEASURE_KINDS)
def test_kernels_match_bruteforce(kind):
    rng = np.random.default_rng(hash(kind) % (2**32))
    for _ in range(25):
        n = int(rng.integers(2, 7))
        a = rng.normal(size=n)
        b = rng.normal(size=n)
        params = PARAM_DRAWS[kind](rng)
        got = elastic_distance(measure(kind, **params), a, b)
        want = _oracle(kind, params, a, b)
        assert got == pytest.approx(want, abs=1e-9), (kind, params, a, b)


def test_dtw_zero_window_equals_euclidean_exactly():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a = rng.normal(size=80)
        b = rng.normal(size=80)
        assert elastic_distance(measure("dtw", window=0.0), a, b) == elastic_distance(
            measure("euclidean"), a, b
        )


def test_dtw_monotone_in_window():
    rng = np.random.default_rng(8)
    for _ in range(10):
        a = rng.normal(size=40)
        b = rng.normal(size=40)
        dists = [
            elastic_distance(measure("dtw", window=w / 10), a, b) for w in range(11)
        ]
        assert all(y <= x for x, y in zip(dists, dists[1:]))


def test_lcss_is_similarity_complement():
    # identical series share every point; fully separated series share none
    x = np.zeros(6)
    assert elastic_distance(measure("lcss", epsilon=0.1), x, x) == 0.0
    assert elastic_distance(measure("lcss", epsilon=0.1), x, x + 10.0) == 1.0


def test_parameter_validation():
    with pytest.raises(InvariantError):
        elastic_distance(measure("wdtw", g=-0.1), A, B)
    with pytest.raises(InvariantError):
        elastic_distance(measure("lcss", epsilon=-1.0), A, B)
    with pytest.raises(InvariantError):
        elastic_distance(measure("twed", nu=-1e-3), A, B)
    with pytest.raises(InvariantError):
        elastic_distance(measure("msm", c=-1.0), A, B)
    with pytest.raises(InvariantError, match="kind"):
        measure("manhattan")


def test_shape_validation():
    with pytest.raises(DataFormatError, match="equal-length"):
        elastic_distance(measure("dtw"), [1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(DataFormatError, match="non-empty"):
        elastic_distance(measure("dtw"), [], [])


def test_default_grid_shapes():
    grids = default_grids(np.arange(10.0))
    assert len(grids["dtw"]) == 101
    assert len(grids["wdtw"]) == 101
    assert len(grids["lcss"]) == 25
    assert len(grids["erp"]) == 25
    assert len(grids["twed"]) == 54
    assert len(grids["msm"]) == 10
    assert grids["dtw"][0] == {"window": 0.0}
    assert grids["dtw"][-1] == {"window": 1.0}
    json.dumps(grids)  # params must stay plain JSON types


def make_series(rng, offset, label, sid):
    vals = np.abs(rng.normal(loc=offset, scale=0.3, size=80)) + 0.1
    return RadialSeries(values=vals, tw_stage=label, subject_id=sid, bone="distal")


TINY_GRIDS = {
    "dtw": [{"window": 0.1}],
    "wdtw": [{"g": 0.05}],
    "lcss": [{"epsilon": 0.5, "band": 0.25}],
    "erp": [{"g": 0.0, "band": 0.25}],
    "twed": [{"nu": 0.001, "lambda": 1.0}],
    "msm": [{"c": 0.1}],
}


@pytest.fixture(scope="module")
def toy_model():
    rng = np.random.default_rng(42)
    series = [make_series(rng, 2.0, "E", f"A{i}") for i in range(8)] + [
        make_series(rng, 6.0, "G", f"B{i}") for i in range(8)
    ]
    return train_elastic_ensemble(series, folds=4, grids=TINY_GRIDS, seed=0), series


def test_ensemble_members_and_weights(toy_model):
    model, _ = toy_model
    assert tuple(m.kind for m in model.members) == ENSEMBLE_KINDS
    assert all(0.0 <= m.weight <= 1.0 for m in model.members)
    assert model.classes == ("E", "G")  # stage order
    # classes this separable should be learned perfectly by every member
    assert all(m.weight == 1.0 for m in model.members)


def test_ensemble_prediction(toy_model):
    model, series = toy_model
    rng = np.random.default_rng(99)
    low = make_series(rng, 2.0, None, "q1")
    high = make_series(rng, 6.0, None, "q2")
    label, scores = predict_elastic(model, low)
    assert label == "E"
    assert scores.sum() == pytest.approx(1.0)
    label, _ = predict_elastic(model, high.values)
    assert label == "G"


def test_cv_predictions_align_with_accuracy(toy_model):
    model, series = toy_model
    preds = ensemble_cv_predictions(model, folds=4, seed=0)
    assert len(preds) == len(series)
    assert set(preds) <= set(model.classes)
    acc = ensemble_cv_accuracy(model, folds=4, seed=0)
    truth = [s.tw_stage for s in series]
    assert acc == sum(p == t for p, t in zip(preds, truth)) / len(truth)


def test_save_load_roundtrip(toy_model, tmp_path):
    model, _ = toy_model
    mpath = tmp_path / "model.json"
    spath = tmp_path / "model.series.csv"
    save_elastic(model, mpath, spath)
    assert json.loads(mpath.read_text())["representation"] == "radial"
    back = load_elastic(mpath)
    assert [ (m.kind, m.params, m.weight) for m in back.members ] == [
        (m.kind, m.params, m.weight) for m in model.members
    ]
    assert back.classes == model.classes
    assert back.references == model.references
    rng = np.random.default_rng(5)
    probe = make_series(rng, 4.0, None, "p")
    label_a, scores_a = predict_elastic(model, probe)
    label_b, scores_b = predict_elastic(back, probe)
    assert label_a == label_b
    assert scores_a == pytest.approx(scores_b, abs=0)


def test_load_resolves_series_next_to_model(toy_model, tmp_path):
    model, _ = toy_model
    first = tmp_path / "a"
    first.mkdir()
    save_elastic(model, first / "m.json", first / "m.series.csv")
    moved = tmp_path / "b"
    moved.mkdir()
    (moved / "m.json").write_bytes((first / "m.json").read_bytes())
    (moved / "m.series.csv").write_bytes((first / "m.series.csv").read_bytes())
    back = load_elastic(moved / "m.json")  # recorded path points at a/, gone after move
    assert back.references == model.references


def test_training_requires_two_classes():
    rng = np.random.default_rng(3)
    series = [make_series(rng, 2.0, "E", f"S{i}") for i in range(4)]
    with pytest.raises(InvariantError, match="two classes"):
        train_elastic_ensemble(series, folds=2, grids=TINY_GRIDS)
