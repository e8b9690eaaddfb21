import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advfilter import isoforest as iso
from advfilter.errors import FormatError, NonFiniteFeature, NotFitted, TooFewPoints

GAMMA = 0.5772156649


def c_ref(m):
    if m <= 1:
        return 0.0
    return 2 * (math.log(m - 1) + GAMMA) - 2 * (m - 1) / m


def walk(tree, x, node=0, depth=0):
    """Recursive reference traversal."""
    if tree.split_dim[node] < 0:
        return depth + c_ref(int(tree.size[node]))
    nxt = tree.left[node] if x[tree.split_dim[node]] < tree.split_value[node] else tree.right[node]
    return walk(tree, x, nxt, depth + 1)


# --- c(m) and scores ----------------------------------------------------------------

def test_c_values():
    assert iso.average_path_length(2) == pytest.approx(2 * GAMMA - 1, abs=1e-15)
    assert round(iso.average_path_length(2), 6) == 0.154431
    assert iso.average_path_length(1) == 0.0
    assert iso.average_path_length(0) == 0.0
    for m in (3, 10, 256, 1000):
        assert iso.average_path_length(m) == pytest.approx(c_ref(m), rel=1e-14)
    assert np.allclose(iso.average_path_length(np.array([1, 2, 5])), [0, c_ref(2), c_ref(5)])


@pytest.mark.parametrize("psi", [2, 16, 200, 256])
def test_score_half_when_path_equals_c(psi):
    assert iso.score_from_path_length(iso.average_path_length(psi), psi) == 0.5


def test_score_limits_and_monotonicity():
    assert iso.score_from_path_length(0.0, 256) == 1.0
    h = np.linspace(0, 50, 200)
    s = iso.score_from_path_length(h, 256)
    assert np.all(np.diff(s) < 0)
    assert np.all((s > 0) & (s <= 1))


# --- tree structure ------------------------------------------------------------------

def test_two_points_one_split():
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    f = iso.fit(X, n_trees=1, psi=2, seed=3)
    t = f.trees[0]
    assert t.n_nodes == 3 and t.split_dim[0] >= 0
    assert t.size[1] == t.size[2] == 1
    assert t.height_limit == 1


def test_identical_points_single_leaf():
    f = iso.fit(np.ones((30, 4)), n_trees=5, seed=0)
    for t in f.trees:
        assert t.n_nodes == 1 and t.size[0] == 30


def test_path_length_examples():
    leaf = iso.IsoTree(np.array([-1], np.int32), np.zeros(1), np.array([-1], np.int32),
                       np.array([-1], np.int32), np.array([1]), 0)
    assert iso.path_length(leaf, np.array([5.0])) == 0.0
    stump = iso.IsoTree(np.array([0, -1, -1], np.int32), np.array([0.5, 0, 0]),
                        np.array([1, -1, -1], np.int32), np.array([2, -1, -1], np.int32),
                        np.array([0, 1, 3]), 1)
    assert iso.path_length(stump, np.array([0.2])) == 1.0
    assert iso.path_length(stump, np.array([0.5])) == pytest.approx(1 + c_ref(3))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 300), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_tree_invariants(n, d, seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.random((n, d)) * 5) / 5  # ties are common
    f = iso.fit(X, n_trees=3, seed=seed)
    assert f.psi == min(256, n)
    for t in f.trees:
        assert len(np.unique(t.sample)) == f.psi
        assert t.height_limit == math.ceil(math.log2(f.psi))
        internal = t.split_dim >= 0
        assert t.size[~internal].sum() == f.psi
        assert np.all(t.size[internal] == 0)
        assert t.depths().max() <= t.height_limit
        ids = np.arange(t.n_nodes)
        assert np.all(t.left[internal] > ids[internal]) and np.all(t.right[internal] > ids[internal])
        children = np.concatenate([t.left[internal], t.right[internal]])
        assert sorted(children.tolist()) == list(range(1, t.n_nodes))
        for x in X[:5]:
            assert iso.path_length(t, x) == pytest.approx(walk(t, x))


def test_splits_partition_training_points():
    rng = np.random.default_rng(4)
    X = rng.random((64, 3))
    t = iso.fit(X, n_trees=1, seed=1).trees[0]
    pts = X[t.sample]
    node_of = np.zeros(len(pts), dtype=int)
    for node in range(t.n_nodes):
        if t.split_dim[node] < 0:
            continue
        here = node_of == node
        left = pts[:, t.split_dim[node]] < t.split_value[node]
        assert (here & left).any() and (here & ~left).any()
        node_of[here & left] = t.left[node]
        node_of[here & ~left] = t.right[node]
    assert np.array_equal(np.bincount(node_of, minlength=t.n_nodes), t.size)


# --- isolation behaviour -------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_planted_outlier_scores_highest(seed):
    rng = np.random.default_rng(100 + seed)
    grid = np.linspace(0.45, 0.55, 3)
    cluster = rng.choice(grid, size=(99, 28))
    u = rng.normal(size=28)
    far = cluster.mean(axis=0) + 10 * u / np.linalg.norm(u)
    X = np.vstack([cluster, far])
    order = rng.permutation(100)
    s = iso.score_samples(iso.fit(X[order], seed=seed), X)
    assert s[-1] > s[:-1].max()


@pytest.mark.parametrize("seed", range(20))
def test_one_dimensional_singleton_isolates_fastest(seed):
    X = np.array([0.0] * 50 + [1000.0])
    f = iso.fit(X, seed=seed)
    h = iso.mean_path_lengths(f, X)
    assert h[-1] < h[:-1].mean()


# --- thresholds ------------------------------------------------------------------------

def test_threshold_quantile_example():
    f = iso.fit(np.random.default_rng(0).random((10, 2)), contamination=0.5, seed=0)
    scores = np.linspace(0.1, 1.0, 10)
    assert iso.calibrate_threshold(f, scores) == pytest.approx(0.55)
    assert f.threshold == pytest.approx(0.55)
    assert iso.predict(f, scores).sum() == 5


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 300), st.floats(0.01, 0.5), st.integers(0, 2**31))
def test_flag_count_tracks_contamination(n, c, seed):
    X = np.random.default_rng(seed).random((n, 3))
    f = iso.fit(X, n_trees=20, contamination=c, seed=seed)
    s = iso.score_samples(f, X)
    iso.calibrate_threshold(f, s)
    flagged = int(iso.predict(f, s).sum())
    ties = len(s) - len(np.unique(s))
    assert abs(flagged - math.ceil(c * n)) <= 1 + ties


def test_small_contamination_flags_only_strict_exceeders():
    f = iso.fit(np.random.default_rng(1).random((50, 2)), contamination=1e-9, seed=0)
    s = iso.score_samples(f, np.random.default_rng(1).random((50, 2)))
    iso.calibrate_threshold(f, s)
    assert f.threshold == pytest.approx(s.max())
    flagged = iso.predict(f, s)
    assert flagged.sum() <= 1
    assert np.all(s[flagged] > f.threshold)


def test_not_fitted_errors():
    f = iso.IsoForest([], 2, 1)
    with pytest.raises(NotFitted):
        iso.score_samples(f, np.zeros((1, 1)))
    with pytest.raises(NotFitted):
        iso.calibrate_threshold(f, [0.5])
    g = iso.fit(np.arange(4.0), seed=0)
    with pytest.raises(NotFitted):
        iso.predict(g, [0.5])


def test_fit_errors():
    with pytest.raises(TooFewPoints):
        iso.fit(np.zeros((1, 3)))
    X = np.zeros((5, 4))
    X[2, 3] = np.nan
    with pytest.raises(NonFiniteFeature) as exc:
        iso.fit(X)
    assert exc.value.dimension == 3
    with pytest.raises(ValueError):
        iso.fit(np.zeros((5, 2)), contamination=0.6)


# --- determinism and serialization ----------------------------------------------------

def test_fit_deterministic_and_worker_invariant():
    X = np.random.default_rng(5).random((120, 6))
    a = iso.fit(X, seed=9)
    b = iso.fit(X, seed=9, workers=3)
    assert iso.dumps(a) == iso.dumps(b)
    assert np.array_equal(iso.score_samples(a, X), iso.score_samples(b, X))
    assert iso.dumps(iso.fit(X, seed=10)) != iso.dumps(a)


def test_serialization_roundtrip(tmp_path):
    X = np.random.default_rng(6).random((80, 28))
    f = iso.fit(X, n_trees=25, contamination=0.2, seed=2**63 + 5)
    iso.calibrate_threshold(f, iso.score_samples(f, X))
    iso.save(f, tmp_path / "f.isof")
    g = iso.load(tmp_path / "f.isof")
    assert (g.psi, g.n_features, g.contamination, g.seed, g.threshold) == \
        (f.psi, f.n_features, f.contamination, f.seed, f.threshold)
    assert np.array_equal(iso.score_samples(g, X), iso.score_samples(f, X))
    assert iso.dumps(g) == iso.dumps(f)
    assert (tmp_path / "f.isof").read_bytes()[:5] == b"ISOF1"


def test_serialization_rejects_damage():
    f = iso.fit(np.random.default_rng(7).random((40, 3)), n_trees=4, seed=1)
    blob = iso.dumps(f)
    rng = np.random.default_rng(8)
    for _ in range(500):
        cut = int(rng.integers(len(blob)))
        with pytest.raises(FormatError):
            iso.loads(blob[:cut])
    with pytest.raises(FormatError):
        iso.loads(blob + b"\0")
    with pytest.raises(FormatError):
        iso.loads(b"ISOF2" + blob[5:])
    for _ in range(500):
        data = bytearray(blob)
        data[int(rng.integers(5, len(data)))] = int(rng.integers(256))
        try:
            iso.loads(bytes(data))
        except FormatError:
            pass
