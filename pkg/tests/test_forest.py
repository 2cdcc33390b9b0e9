import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.ensemble import RandomForestClassifier

from adhd_eeg import forest
from adhd_eeg.dataset import InstanceTable, split_stratified, synth_generate
from adhd_eeg.exceptions import SingleClass
from oracles import best_split_enumerate, gini


def tab(X, y):
    X = np.asarray(X, dtype=np.float64)
    return InstanceTable(X, np.asarray(y), tuple(f"f{i}" for i in range(X.shape[1])))


def test_gini_values():
    assert forest.gini_impurity([10, 0]) == 0.0
    assert forest.gini_impurity([5, 5]) == 0.5
    assert forest.gini_impurity([3, 1]) == pytest.approx(0.375)
    with pytest.raises(forest.EmptyCounts):
        forest.gini_impurity([0, 0])


@given(st.lists(st.integers(0, 1000), min_size=2, max_size=2).filter(lambda c: sum(c) > 0))
def test_gini_bounds(counts):
    g = forest.gini_impurity(counts)
    assert 0.0 <= g <= 0.5 + 1e-15
    assert g == pytest.approx(gini(counts))


def test_best_split_simple():
    assert forest.best_split([[1], [2], [9], [10]], [0, 0, 1, 1]) == (0, 5.5, 0.5)
    assert forest.best_split([[3], [3], [3]], [0, 1, 0]) is None
    assert forest.best_split([[1], [2], [3]], [1, 1, 1]) is None


@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(0, 1)), min_size=2, max_size=25))
def test_best_split_matches_enumeration(pairs):
    x = [float(p[0]) for p in pairs]
    y = [p[1] for p in pairs]
    ours = forest.best_split(np.array(x)[:, None], y)
    ref = best_split_enumerate(x, y)
    if ref is None or ref[1] <= 1e-12:
        assert ours is None or ours[2] == pytest.approx(ref[1], abs=1e-12)
        return
    assert ours[1] == ref[0]
    assert ours[2] == pytest.approx(ref[1], abs=1e-12)


def test_single_tree_memorizes_tiny_set():
    t = tab([[0, 1], [1, 0], [2, 3], [3, 2]], [0, 0, 1, 1])
    f = forest.fit_forest(t, forest.ForestConfig(n_estimators=1, max_features="all", bootstrap=False))
    assert forest.predict(f, t.features)[0].tolist() == [0, 0, 1, 1]
    proba = forest.predict(f, t.features)[1]
    assert set(np.unique(proba)) <= {0.0, 1.0}


@given(st.integers(0, 2**32 - 1))
def test_fully_grown_tree_fits_its_bootstrap(seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((40, 4))
    y = r.integers(0, 2, 40)
    cfg = forest.ForestConfig(n_estimators=1, seed=seed)
    rng = np.random.default_rng(forest.tree_seed(seed, 0))
    rows = rng.integers(0, 40, size=40)
    tree = forest.grow_tree(X[rows], y[rows], cfg, rng)
    assert np.array_equal(tree.predict_proba(X[rows]).argmax(axis=1), y[rows])


def test_xor_needs_zero_gain_split():
    t = tab([[0, 0], [0, 1], [1, 0], [1, 1]], [0, 1, 1, 0])
    f = forest.fit_forest(t, forest.ForestConfig(n_estimators=1, max_features="all", bootstrap=False))
    assert forest.predict(f, t.features)[0].tolist() == [0, 1, 1, 0]


def test_vote_two_thirds():
    leaf = lambda c: forest.Tree([-1], [0.0], [-1], [-1], [c])
    f = forest.Forest([leaf([0, 3]), leaf([0, 5]), leaf([2, 0])], forest.ForestConfig(3), 1)
    labels, proba = forest.predict(f, np.zeros((1, 1)))
    assert proba[0, 1] == pytest.approx(2 / 3) and labels[0] == 1


def test_tie_goes_to_control():
    leaf = lambda c: forest.Tree([-1], [0.0], [-1], [-1], [c])
    f = forest.Forest([leaf([0, 1]), leaf([1, 0])], forest.ForestConfig(2), 1)
    assert forest.predict(f, np.zeros((1, 1)))[0][0] == 0


def test_quality_and_determinism():
    t = synth_generate(500, class_separation=4.0, seed=11)
    pair = split_stratified(t, 0.7, seed=11)
    cfg = forest.ForestConfig(n_estimators=30, seed=42)
    f1 = forest.fit_forest(pair.train, cfg)
    f8 = forest.fit_forest(pair.train, cfg, n_jobs=8)
    p1 = forest.predict(f1, pair.test.features)
    p8 = forest.predict(f8, pair.test.features)
    assert np.mean(p1[0] == pair.test.labels) >= 0.95
    assert p1[1].tobytes() == p8[1].tobytes()
    ref = RandomForestClassifier(30, random_state=42).fit(pair.train.features, pair.train.labels)
    assert ref.score(pair.test.features, pair.test.labels) >= 0.95


@given(st.integers(0, 2**32 - 1))
def test_probabilities_valid(seed):
    r = np.random.default_rng(seed)
    t = tab(r.standard_normal((30, 3)), [0, 1] * 15)
    f = forest.fit_forest(t, forest.ForestConfig(n_estimators=5, seed=seed))
    p = f.predict_proba(r.standard_normal((10, 3)))
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_serialization_roundtrip(tmp_path, rng):
    t = tab(rng.standard_normal((40, 3)), [0, 1] * 20)
    f = forest.fit_forest(t, forest.ForestConfig(n_estimators=4, seed=1))
    f.save(tmp_path / "f.json")
    g = forest.Forest.load(tmp_path / "f.json")
    X = rng.standard_normal((20, 3))
    assert f.predict_proba(X).tobytes() == g.predict_proba(X).tobytes()


def test_single_class_rejected():
    with pytest.raises(SingleClass):
        forest.fit_forest(tab([[0], [1]], [1, 1]))


def test_classifier_estimator(rng):
    from sklearn.base import clone
    X = rng.standard_normal((60, 3))
    y = (X[:, 0] > 0).astype(int)
    clf = clone(forest.ForestClassifier(n_estimators=10, random_state=0)).fit(X, y)
    assert clf.score(X, y) == 1.0
    assert clf.predict_proba(X).shape == (60, 2)
