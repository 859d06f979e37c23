import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dasmc.forest import (ForestConfig, ForestError, ForestFormatError, KindForests, fit_forest, fit_kind_forests,
                          forest_from_leaves, holdout_metrics, load_forest, prune_features_study, r_squared,
                          save_forest, train_test_split)
from dasmc.moves import ALL_FEATURE_NAMES


def synthetic(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 6))
    y = 3 * X[:, 0] + rng.normal(0, 0.1, n)
    return X, y


@pytest.fixture(scope="module")
def linear_forest():
    X, y = synthetic(2000, 0)
    tr, te = train_test_split(len(y), 0.1, 0)
    forest = fit_forest(X[tr], y[tr], ForestConfig(n_trees=100, seed=1))
    return forest, X[te], y[te]


def test_identical_features_give_single_leaf():
    X = np.ones((20, 3))
    y = np.arange(20.0)
    f = fit_forest(X, y, ForestConfig(n_trees=1, bootstrap=False))
    assert f.n_splits == 0
    assert f.predict_one(np.ones(3)) == pytest.approx(y.mean())
    assert np.all(f.feature_importance() == 0)


def test_constant_target_is_not_an_error():
    rng = np.random.default_rng(0)
    f = fit_forest(rng.random((30, 4)), np.full(30, 2.5), ForestConfig(n_trees=5))
    assert np.all(f.predict(rng.random((10, 4))) == 2.5)


def test_memorization():
    rng = np.random.default_rng(1)
    X = rng.random((200, 5))
    y = rng.normal(size=200)
    f = fit_forest(X, y, ForestConfig(n_trees=1, bootstrap=False, min_leaf_size=1, mtry=5))
    assert np.mean((f.predict(X) - y) ** 2) == pytest.approx(0.0, abs=1e-24)


def test_linear_signal(linear_forest):
    forest, Xte, yte = linear_forest
    assert holdout_metrics(forest, Xte, yte)["r2"] > 0.95
    imp = forest.feature_importance()
    assert imp[0] > 0.8
    assert forest.importance_table()[0][0] == "x0"
    assert imp.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(imp >= 0)


def test_hand_built_mean():
    f = forest_from_leaves([1.0, 3.0], ["a", "b"])
    assert f.predict_one([0.0, 0.0]) == 2.0
    assert np.all(f.feature_importance() == 0)


def test_prediction_is_mean_of_trees(linear_forest):
    forest, Xte, _ = linear_forest
    X = np.random.default_rng(2).random((100, 6))
    assert np.allclose(forest.predict(X), forest.predict_trees(X).mean(axis=1), rtol=0, atol=1e-12)


def test_batch_equals_single(linear_forest):
    forest, _, _ = linear_forest
    X = np.random.default_rng(3).random((10_000, 6))
    batch = forest.predict(X)
    single = np.array([forest.predict_one(x) for x in X[:500]])
    assert np.array_equal(batch[:500], single)
    assert np.array_equal(batch, np.concatenate([forest.predict(X[:5000]), forest.predict(X[5000:])]))


def test_schema_mismatch(linear_forest):
    forest, _, _ = linear_forest
    with pytest.raises(ForestError):
        forest.predict(np.zeros((2, 5)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 60))
def test_predictions_within_target_range(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = rng.normal(size=n)
    f = fit_forest(X, y, ForestConfig(n_trees=5, seed=seed % 1000, min_leaf_size=1))
    pred = f.predict(rng.normal(size=(50, 3)) * 3)
    assert np.all(pred >= y.min() - 1e-12) and np.all(pred <= y.max() + 1e-12)


def test_determinism():
    X, y = synthetic(300, 4)
    a = fit_forest(X, y, ForestConfig(n_trees=20, seed=9))
    b = fit_forest(X, y, ForestConfig(n_trees=20, seed=9))
    c = fit_forest(X, y, ForestConfig(n_trees=20, seed=10))
    for name in ("feat", "thr", "left", "right", "value"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.predict(X), c.predict(X))


def test_training_error_non_increasing_in_depth():
    X, y = synthetic(400, 5)
    mses = []
    for depth in (1, 2, 3, 5, 8, 0):
        f = fit_forest(X, y, ForestConfig(n_trees=1, bootstrap=False, max_depth=depth, min_leaf_size=1, mtry=6))
        mses.append(np.mean((f.predict(X) - y) ** 2))
    assert all(b <= a + 1e-15 for a, b in zip(mses, mses[1:]))


def test_bagging_reduces_holdout_error():
    wins = 0
    for seed in range(10):
        X, y = synthetic(400, 100 + seed)
        tr, te = train_test_split(400, 0.25, seed)
        one = fit_forest(X[tr], y[tr], ForestConfig(n_trees=1, seed=seed))
        many = fit_forest(X[tr], y[tr], ForestConfig(n_trees=100, seed=seed))
        wins += holdout_metrics(many, X[te], y[te])["mse"] <= holdout_metrics(one, X[te], y[te])["mse"]
    assert wins >= 8


@pytest.mark.parametrize("kwargs", [{"n_trees": 0}, {"min_leaf_size": 0}, {"max_depth": -1}])
def test_bad_config(kwargs):
    with pytest.raises(ForestError):
        ForestConfig(**kwargs)


def test_bad_training_data():
    with pytest.raises(ForestError):
        fit_forest(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ForestError):
        fit_forest(np.array([[np.nan]]), np.array([1.0]))
    with pytest.raises(ForestError):
        fit_forest(np.zeros((3, 2)), np.zeros(3), ForestConfig(mtry=3))


def test_r_squared():
    y = np.array([1.0, 2.0, 3.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(3, 2.0)) == 0.0


# -- serialization ------------------------------------------------------------

def test_round_trip(tmp_path, linear_forest):
    forest, _, _ = linear_forest
    save_forest(forest, tmp_path / "f.dapf")
    back = load_forest(tmp_path / "f.dapf")
    X = np.random.default_rng(6).random((1000, 6))
    assert np.array_equal(back.predict(X), forest.predict(X))
    assert back.feature_names == forest.feature_names
    assert back.config == forest.config
    assert (tmp_path / "f.dapf").read_bytes()[:4] == b"DAPF"


def test_truncated_and_corrupt_files(tmp_path, linear_forest):
    forest, _, _ = linear_forest
    save_forest(forest, tmp_path / "f.dapf")
    data = (tmp_path / "f.dapf").read_bytes()
    for bad in (data[:-8], data[:20], b"XXXX" + data[4:], data + b"\0"):
        (tmp_path / "bad.dapf").write_bytes(bad)
        with pytest.raises(ForestFormatError):
            load_forest(tmp_path / "bad.dapf")


def test_version_mismatch(tmp_path, linear_forest):
    forest, _, _ = linear_forest
    save_forest(forest, tmp_path / "f.dapf")
    data = bytearray((tmp_path / "f.dapf").read_bytes())
    data[4] = 99
    (tmp_path / "v.dapf").write_bytes(bytes(data))
    with pytest.raises(ForestFormatError, match="version"):
        load_forest(tmp_path / "v.dapf")


def test_schema_recorded(tmp_path, linear_forest):
    forest, _, _ = linear_forest
    save_forest(forest, tmp_path / "f.dapf")
    with pytest.raises(ForestFormatError):
        load_forest(tmp_path / "f.dapf", feature_names=["a"] * 6)
    assert load_forest(tmp_path / "f.dapf", feature_names=forest.feature_names).n_trees == 100


# -- per-kind forests ---------------------------------------------------------

def test_kind_forests(tmp_path):
    rng = np.random.default_rng(7)
    X = rng.random((600, 4))
    X[:, -1] = rng.integers(0, 3, 600)
    y = np.where(X[:, -1] == 1, 10 * X[:, 0], -5 * X[:, 1])
    kf = fit_kind_forests(X, y, ForestConfig(n_trees=30, seed=2))
    assert sorted(kf.forests) == [0, 1, 2]
    assert r_squared(y, kf.predict(X)) > 0.9
    save_forest(kf, tmp_path / "k.dapf")
    back = load_forest(tmp_path / "k.dapf")
    assert isinstance(back, KindForests)
    assert np.array_equal(back.predict(X), kf.predict(X))
    Z = X[:3].copy()
    Z[:, -1] = 7
    with pytest.raises(ForestError):
        kf.predict(Z)
    data = (tmp_path / "k.dapf").read_bytes()
    (tmp_path / "t.dapf").write_bytes(data[:-10])
    with pytest.raises(ForestFormatError):
        load_forest(tmp_path / "t.dapf")


# -- pruning study ------------------------------------------------------------

def test_pruning_study_structure():
    X, y = synthetic(300, 8)
    cfg = ForestConfig(n_trees=20, seed=3)
    rows = prune_features_study(X, y, cfg)
    assert [r["k"] for r in rows] == [6, 5, 4, 3, 2, 1]
    tr, te = train_test_split(300, 0.1, 0)
    base = holdout_metrics(fit_forest(X[tr], y[tr], cfg), X[te], y[te])
    assert rows[0]["rmse"] == pytest.approx(base["rmse"])
    assert rows[-1]["features"] == ["x0"]
    with pytest.raises(ForestError):
        prune_features_study(X[:20], y[:20], cfg)


def test_pruning_study_on_pilot_log(pilot12):
    _, log, _ = pilot12
    tree_rows = log.tree_move_mask()
    X = log.features[tree_rows]
    y = log.delta_true[tree_rows]
    rows = prune_features_study(X, y, ForestConfig(n_trees=50, seed=0), ALL_FEATURE_NAMES, ks=[36, 15, 5])
    r2 = {r["k"]: r["r2"] for r in rows}
    assert r2[15] >= r2[5]
