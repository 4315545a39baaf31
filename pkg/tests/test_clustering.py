from fractions import Fraction

import numpy as np
import pytest

from lvpoly.clustering import (
    ALGORITHMS,
    ClusterError,
    NormalizedPatternSet,
    PatternSet,
    build_patterns,
    cluster,
    elbow_analysis,
    normalize,
    within_cluster_ss,
)
from lvpoly.demand import DemandPool, sample_scenarios


def make_normalized(values, timestep=0):
    values = np.asarray(values, dtype=float)
    return NormalizedPatternSet(
        timestep=timestep,
        values=values,
        column_min=values.min(axis=0),
        column_max=values.max(axis=0),
        scenario_ids=tuple(range(values.shape[0])),
        customer_ids=tuple(f"h{i}" for i in range(values.shape[1])),
    )


def make_patterns(values):
    values = np.asarray(values, dtype=float)
    return PatternSet(
        timestep=0, values=values,
        scenario_ids=tuple(range(values.shape[0])),
        customer_ids=tuple(f"h{i}" for i in range(values.shape[1])),
    )


# ---------------------------------------------------------------------------
# patterns
# ---------------------------------------------------------------------------


def test_pattern_dimensions(desk_feeder, scenarios):
    patterns = build_patterns(desk_feeder, scenarios[:3], timestep=108)
    assert patterns.values.shape == (3, len(desk_feeder.customers))
    assert patterns.customer_ids == desk_feeder.customer_ids


def test_identical_scenarios_give_identical_patterns(desk_feeder, scenarios):
    patterns = build_patterns(desk_feeder, [scenarios[0], scenarios[0]], timestep=60)
    assert np.array_equal(patterns.values[0], patterns.values[1])


def test_zero_demand_pattern_is_flat(desk_feeder, pool):
    zero_pool = DemandPool(p_kw=np.zeros((1, 144)), power_factor=np.array([0.95]),
                           class_labels=("z",), step_minutes=10)
    sc = sample_scenarios(zero_pool, desk_feeder, 1, seed=0)
    patterns = build_patterns(desk_feeder, sc, timestep=10)
    assert np.allclose(patterns.values, 1.0, atol=0.0)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def test_normalize_column_formula():
    norm = normalize(make_patterns([[2.0], [4.0], [6.0]]))
    assert np.allclose(norm.values[:, 0], [0.0, 0.5, 1.0], atol=0.0)


def test_normalize_degenerate_column_maps_to_half():
    norm = normalize(make_patterns([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
    assert np.all(norm.values[:, 0] == 0.5)


def test_normalize_range_and_extrema():
    rng = np.random.default_rng(0)
    patterns = make_patterns(rng.normal(1.0, 0.05, size=(40, 6)))
    norm = normalize(patterns)
    assert norm.values.min() >= 0.0 and norm.values.max() <= 1.0
    for col in range(6):
        assert norm.values[:, col].min() == 0.0
        assert norm.values[:, col].max() == 1.0
    assert np.array_equal(norm.column_min, patterns.values.min(axis=0))


def test_normalize_needs_two_scenarios():
    with pytest.raises(ClusterError):
        normalize(make_patterns([[1.0, 2.0]]))


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------


def random_normalized(S=30, H=5, seed=1):
    rng = np.random.default_rng(seed)
    return make_normalized(rng.uniform(size=(S, H)))


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_all_singletons(algorithm):
    norm = random_normalized(S=12)
    result = cluster(norm, k=12, algorithm=algorithm, seed=0)
    assert result.sizes == (1,) * 12
    assert within_cluster_ss(norm, result) == 0.0
    assert all(w == Fraction(1, 12) for w in result.omega_fractions)
    assert set(result.representatives) == set(range(12))


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_single_cluster(algorithm):
    norm = random_normalized(S=15)
    result = cluster(norm, k=1, algorithm=algorithm, seed=0)
    assert result.sizes == (15,)
    assert result.omega_fractions[0] == 1
    assert np.allclose(result.centroids[0], norm.values.mean(axis=0))


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_two_blob_recovery(algorithm):
    rng = np.random.default_rng(7)
    blob_a = rng.normal(0.1, 0.01, size=(20, 4))
    blob_b = rng.normal(0.9, 0.01, size=(24, 4))
    norm = make_normalized(np.vstack([blob_a, blob_b]))
    result = cluster(norm, k=2, algorithm=algorithm, seed=3)
    labels = result.labels
    assert len(set(labels[:20])) == 1
    assert len(set(labels[20:])) == 1
    assert labels[0] != labels[-1]
    assert sorted(result.sizes) == [20, 24]


def test_k_bounds():
    norm = random_normalized(S=8)
    with pytest.raises(ClusterError):
        cluster(norm, k=9)
    with pytest.raises(ClusterError):
        cluster(norm, k=0)
    with pytest.raises(ClusterError):
        cluster(norm, k=2, algorithm="voronoi")


def test_duplicate_patterns_cannot_fill_clusters():
    values = np.tile([[0.1, 0.2]], (6, 1))
    with pytest.raises(ClusterError, match="distinct"):
        cluster(make_normalized(values), k=3)


def test_within_cluster_ss_formula():
    norm = make_normalized([[0.0, 0.0], [1.0, 0.0]])
    result = cluster(norm, k=1, algorithm="ward")
    assert within_cluster_ss(norm, result) == pytest.approx(0.5, abs=1e-15)


def test_omegas_sum_exactly_to_one():
    norm = random_normalized(S=37)
    result = cluster(norm, k=7, algorithm="ward")
    assert sum(result.omega_fractions, Fraction(0)) == 1
    assert sum(result.sizes) == 37


def test_representative_minimizes_distance_with_lowest_id_ties():
    # two coincident points share the minimum distance; the lower id wins
    values = np.array([[0.4, 0.4], [0.4, 0.4], [0.45, 0.45], [0.9, 0.1]])
    norm = make_normalized(values)
    result = cluster(norm, k=2, algorithm="ward")
    big = int(np.argmax(result.sizes))
    assert result.representatives[big] == 0
    for ki in range(result.k):
        rows = np.flatnonzero(result.labels == ki)
        d2 = ((values[rows] - result.centroids[ki]) ** 2).sum(axis=1)
        rep_row = result.representative_rows[ki]
        assert d2.min() == pytest.approx(((values[rep_row] - result.centroids[ki]) ** 2).sum())
        assert result.labels[rep_row] == ki


def test_hierarchical_is_deterministic():
    norm = random_normalized(S=25, seed=5)
    a = cluster(norm, k=6, algorithm="ward")
    b = cluster(norm, k=6, algorithm="ward")
    assert np.array_equal(a.labels, b.labels)


def test_kmeans_is_deterministic_given_seed():
    norm = random_normalized(S=40, seed=6)
    a = cluster(norm, k=5, algorithm="kmeanspp", seed=11)
    b = cluster(norm, k=5, algorithm="kmeanspp", seed=11)
    assert np.array_equal(a.labels, b.labels)


def test_ward_compactness_non_increasing():
    norm = random_normalized(S=120, H=8, seed=2)
    points = elbow_analysis(norm, ks=[2, 5, 10, 20, 40], algorithms=("ward",))
    values = [p.compactness for p in points]
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


def test_kmeans_warm_start_compactness_non_increasing():
    norm = random_normalized(S=90, H=6, seed=8)
    points = elbow_analysis(norm, ks=list(range(2, 12)), algorithms=("kmeanspp",), seed=4)
    values = [p.compactness for p in points]
    assert all(a >= b - 1e-9 for a, b in zip(values, values[1:]))


def test_cluster_result_partitions_everything():
    norm = random_normalized(S=33, seed=9)
    result = cluster(norm, k=6, algorithm="average")
    assert sorted(np.unique(result.labels)) == list(range(6))
    assert result.labels.shape == (33,)
