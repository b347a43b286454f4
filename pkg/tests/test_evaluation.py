import numpy as np
import pytest

from saxtree.dataset import load_series
from saxtree.evaluation import (
    avg_error_ratio,
    average_precision,
    brute_force_knn,
    build_query_set,
    generate_random_walk,
    map_score,
    random_walk_series,
)
from saxtree.query import KnnResult

from conftest import N


def _result(ordinals, distances):
    return KnnResult(np.asarray(ordinals, dtype=np.int64),
                     np.asarray(distances, dtype=np.float64))


# ---------------------------------------------------------------------------
# generator


def test_generator_is_deterministic(tmp_path):
    a = tmp_path / "a.bin"
    b = tmp_path / "b.bin"
    generate_random_walk(a, 100, 32, seed=9)
    generate_random_walk(b, 100, 32, seed=9)
    assert a.read_bytes() == b.read_bytes()


def test_generated_series_are_normalized(tmp_path):
    path = tmp_path / "d.bin"
    generate_random_walk(path, 200, 256, seed=1)
    data = load_series(path, 256).astype(np.float64)
    assert np.all(np.abs(data.mean(axis=1)) < 1e-5)
    assert np.all(np.abs(data.std(axis=1) - 1.0) < 1e-5)


def test_walk_steps_pass_moment_sanity_check():
    # reconstruct the pre-normalization walk and audit its Gaussian steps
    n = 1024
    rng = np.random.default_rng(3)
    steps = rng.standard_normal((50, n))
    walks = np.cumsum(steps, axis=1)
    diffs = np.diff(walks, axis=1)
    assert np.all(np.abs(diffs.mean(axis=1)) < 4 / np.sqrt(n))
    assert np.all((diffs.var(axis=1) > 0.5) & (diffs.var(axis=1) < 1.5))


def test_generator_batch_size_independent(tmp_path):
    a = tmp_path / "a.bin"
    b = tmp_path / "b.bin"
    generate_random_walk(a, 120, 32, seed=5, batch=7)
    generate_random_walk(b, 120, 32, seed=5, batch=120)
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------------------
# brute force


def test_query_in_dataset_is_its_own_nearest_neighbor(dataset):
    ords, dists = brute_force_knn(dataset, dataset[5], 1)
    assert ords[0] == 5 and dists[0] == 0.0


def test_two_series_order_matches_pairwise_distance():
    data = np.array([[0.0, 0.0], [3.0, 4.0]])
    q = np.array([0.0, 1.0])
    ords, dists = brute_force_knn(data, q, 2)
    assert list(ords) == [0, 1]
    assert dists == pytest.approx([1.0, np.hypot(3, 3)])


def test_distance_ties_break_by_ordinal():
    data = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 5.0]])
    ords, _ = brute_force_knn(data, np.zeros(2), 2)
    assert list(ords) == [0, 1]


def test_dtw_brute_force_agrees_with_direct_scan(dataset):
    from saxtree.summarization import dtw_distance

    q = random_walk_series(1, N, seed=123)[0]
    sample = dataset[:200]
    ords, dists = brute_force_knn(sample, q, 5, "dtw", window=6)
    direct = np.array([dtw_distance(s, q, 6) for s in sample])
    order = np.lexsort((np.arange(len(sample)), direct))[:5]
    assert list(ords) == list(order)
    assert np.allclose(dists, direct[order])


# ---------------------------------------------------------------------------
# MAP


def test_map_perfect_results_scores_one(dataset, queries):
    qs = build_query_set(dataset[:500], queries, 5)
    results = [_result(o, d) for o, d in zip(qs.truth_ordinals, qs.truth_distances)]
    assert map_score(results, qs, 5) == 1.0


def test_map_disjoint_results_scores_zero(dataset, queries):
    qs = build_query_set(dataset[:500], queries, 5)
    results = [_result([9001 + i for i in range(5)], [1e6 + i for i in range(5)])
               for _ in queries]
    assert map_score(results, qs, 5) == 0.0


def test_average_precision_hand_worked_case():
    # k=2: first returned is a true neighbor, second is not
    ap = average_precision([10, 99], [1.0, 50.0], [10, 20], [1.0, 2.0], 2)
    assert ap == pytest.approx(0.5)


def test_distance_tie_counts_as_true_neighbor():
    # ordinal 99 is not in the truth list but ties the kth distance
    ap = average_precision([10, 99], [1.0, 2.0], [10, 20], [1.0, 2.0], 2)
    assert ap == pytest.approx(1.0)


def test_map_equals_recall_for_distance_sorted_results(dataset):
    """With results sorted by true distance, AP collapses to recall."""
    rng = np.random.default_rng(8)
    for trial in range(50):
        size = int(rng.integers(20, 60))
        k = int(rng.integers(1, 10))
        sub = dataset[rng.choice(len(dataset), size=size, replace=False)]
        q = random_walk_series(1, N, seed=1000 + trial)[0]
        qs = build_query_set(sub, [q], k)
        # an imperfect, distance-sorted result: the true kNN of a half sample
        half = sub[: size // 2]
        o, d = brute_force_knn(half, q, k)
        res = _result(o, d)
        ap = average_precision(res.ordinals, res.distances,
                               qs.truth_ordinals[0], qs.truth_distances[0], k)
        truth_set = set(int(x) for x in qs.truth_ordinals[0])
        kth = qs.truth_distances[0][-1]
        hits = sum(1 for o_, d_ in zip(res.ordinals, res.distances)
                   if int(o_) in truth_set or d_ <= kth + 1e-9)
        recall = hits / k
        assert abs(ap - recall) <= 1e-12


# ---------------------------------------------------------------------------
# error ratio


def test_exact_results_give_unit_ratio(dataset, queries):
    qs = build_query_set(dataset[:500], queries, 5)
    results = [_result(o, d) for o, d in zip(qs.truth_ordinals, qs.truth_distances)]
    ratio, excluded = avg_error_ratio(results, qs, 5)
    assert ratio == pytest.approx(1.0)
    assert excluded == 0


def test_doubled_distances_give_ratio_two(dataset, queries):
    qs = build_query_set(dataset[:500], queries, 5)
    results = [_result(o, 2 * np.asarray(d))
               for o, d in zip(qs.truth_ordinals, qs.truth_distances)]
    ratio, _ = avg_error_ratio(results, qs, 5)
    assert ratio == pytest.approx(2.0)


def test_ratio_matches_direct_formula():
    qs = build_query_set(np.eye(3) * 2, [np.zeros(3)], 2)
    res = _result([0, 1], [qs.truth_distances[0][0] * 1.5,
                           qs.truth_distances[0][1] * 1.25])
    ratio, _ = avg_error_ratio([res], qs, 2)
    assert ratio == pytest.approx((1.5 + 1.25) / 2)


def test_zero_truth_distance_exclusion(dataset):
    q = dataset[0]
    qs = build_query_set(dataset[:100], [q], 2)
    assert qs.truth_distances[0][0] == 0.0
    # approximate misses the zero-distance twin entirely
    res = _result([50, 51], [1.0, 2.0])
    ratio, excluded = avg_error_ratio([res], qs, 2)
    assert excluded == 1 and np.isnan(ratio)
    # approximate that also finds it contributes a 1.0 term
    res = _result(qs.truth_ordinals[0], qs.truth_distances[0])
    ratio, excluded = avg_error_ratio([res], qs, 2)
    assert excluded == 0 and ratio == pytest.approx(1.0)
