import math
from itertools import combinations

import numpy as np
import pytest

from saxtree.split import (
    UnsplittableNodeError,
    base_distribution,
    binary_baseline_plan,
    child_isax,
    fanout_range,
    find_optimal_plan,
    project_distribution,
    projected_variance,
    promotable_segments,
    promote_isax,
    promote_sids,
    score_plan,
    segment_variances,
)
from saxtree.summarization import ISaxWord, get_breakpoints


def _random_node(rng, count, w, b=8, depth=2):
    """A random iSAX word plus SAX words it covers."""
    lengths = rng.integers(0, depth + 1, size=w)
    prefixes = np.array([rng.integers(0, 1 << ln) if ln else 0 for ln in lengths])
    word = ISaxWord.from_arrays(prefixes, lengths)
    sax = np.empty((count, w), dtype=np.uint8)
    for j in range(w):
        free = b - lengths[j]
        sax[:, j] = (prefixes[j] << free) | rng.integers(0, 1 << free, size=count)
    return word, sax


# ---------------------------------------------------------------------------
# segment statistics and Eq.-style variance accumulation


def test_variance_zero_when_all_series_share_symbols():
    bps = get_breakpoints(8)
    word = ISaxWord.root(4)
    sax = np.tile(np.array([10, 20, 30, 40], dtype=np.uint8), (50, 1))
    assert np.allclose(segment_variances(sax, word, bps), 0.0, atol=1e-12)


def test_variance_of_two_equal_groups_is_half_gap_squared():
    bps = get_breakpoints(8)
    word = ISaxWord.root(1)
    sax = np.array([[10]] * 25 + [[200]] * 25, dtype=np.uint8)
    m1 = bps.midpoint(0, 1)
    m2 = bps.midpoint(1, 1)
    expect = ((m1 - m2) / 2) ** 2
    assert segment_variances(sax, word, bps)[0] == pytest.approx(expect)


def test_accumulated_variance_equals_direct_projection():
    """Summing per-segment variances must equal the variance of the
    projected midpoint vectors computed from scratch."""
    rng = np.random.default_rng(21)
    bps = get_breakpoints(8)
    w = 8
    for _ in range(200):
        word, sax = _random_node(rng, rng.integers(2, 200), w)
        segs = promotable_segments(word, 8)
        if not segs:
            continue
        stats = segment_variances(sax, word, bps)
        lam = rng.integers(1, len(segs) + 1)
        plan = tuple(sorted(rng.choice(segs, size=lam, replace=False)))
        acc = projected_variance(plan, stats)
        # direct: build each series' midpoint vector on the plan segments
        vectors = np.empty((len(sax), lam))
        for i, seg in enumerate(plan):
            level = word.lengths[seg] + 1
            prefixes = sax[:, seg].astype(np.int64) >> (8 - level)
            vectors[:, i] = bps.midpoint(prefixes, level)
        direct = float(np.sum(np.var(vectors, axis=0)))
        assert acc == pytest.approx(direct, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# fanout range


def test_fanout_range_reference_case():
    assert fanout_range(100_000, 10_000, 0.5, 3.0, 16) == (2, 4)


def test_fanout_lower_clamp():
    assert fanout_range(10_001, 10_000, 0.5, 3.0, 16).lam_min == 1


def test_fanout_upper_clamp_at_w():
    w, th = 4, 10
    assert fanout_range((1 << w) * th * 3, th, 0.5, 3.0, w).lam_max == w


def test_fanout_rejects_non_overflowing_node():
    with pytest.raises(ValueError):
        fanout_range(10, 10, 0.5, 3.0, 4)


def test_fanout_empty_band_clamps_to_lam_min():
    # c_n barely over th with a high F_l makes floor(log2(...)) < lam_min
    r = fanout_range(101, 100, 0.9, 1.0, 16)
    assert r.lam_min == r.lam_max >= 1


# ---------------------------------------------------------------------------
# size distributions


def test_base_distribution_single_series():
    word = ISaxWord.root(3)
    sax = np.array([[0x80, 0x00, 0xFF]], dtype=np.uint8)
    assert base_distribution(sax, word, 8) == {0b101: 1}


def test_reference_hierarchical_distribution():
    # grouped sizes 300/60/23/25 over two segments fold to 360/48
    base = {0b00: 300, 0b01: 60, 0b10: 23, 0b11: 25}
    assert project_distribution(base, (1, 2), (1,)) == {0: 360, 1: 48}
    assert project_distribution(base, (1, 2), (2,)) == {0: 323, 1: 85}


def test_project_identity_and_subset_check():
    base = {0: 5, 3: 7}
    assert project_distribution(base, (1, 2), (1, 2)) == base
    with pytest.raises(ValueError):
        project_distribution(base, (1, 2), (3,))


def test_projection_equals_recount_on_random_nodes():
    rng = np.random.default_rng(22)
    for _ in range(200):
        word, sax = _random_node(rng, rng.integers(2, 300), 6)
        segs = promotable_segments(word, 8)
        if len(segs) < 2:
            continue
        base = base_distribution(sax, word, 8)
        k = rng.integers(1, len(segs))
        sub = tuple(sorted(rng.choice(segs, size=k, replace=False)))
        projected = project_distribution(base, tuple(segs), sub)
        recount = {}
        for sid in promote_sids(sax, word, sub, 8):
            recount[int(sid)] = recount.get(int(sid), 0) + 1
        assert projected == recount


# ---------------------------------------------------------------------------
# plan scoring


def test_balanced_children_score_alpha_compactness():
    word = ISaxWord.root(1)
    stats = np.zeros(1)
    score = score_plan((0,), {0: 50, 1: 50}, stats, th=100, alpha=0.2)
    assert score == pytest.approx(math.exp(0.0) + 0.2)


def test_one_sided_overflow_score_terms():
    # 4*th series all on one side of a single-segment plan
    th = 100
    stats = np.array([0.7])
    score = score_plan((0,), {0: 4 * th}, stats, th=th, alpha=0.2)
    o = 0.5  # one of the two children overflows
    sigma = float(np.std([4.0, 0.0]))
    expect = math.exp(math.sqrt(0.7)) + 0.2 * math.exp(-(1 + o) * sigma)
    assert score == pytest.approx(expect)


def test_score_increases_with_projected_variance():
    dist = {0: 10, 1: 10}
    s1 = score_plan((0,), dist, np.array([0.1]), 100, 0.2)
    s2 = score_plan((0,), dist, np.array([0.9]), 100, 0.2)
    assert s2 > s1


def test_balanced_beats_skewed_at_equal_variance():
    stats = np.array([0.5, 0.5])
    balanced = score_plan((0, 1), {0: 25, 1: 25, 2: 25, 3: 25}, stats, 100, 0.2)
    skewed = score_plan((0, 1), {0: 97, 1: 1, 2: 1, 3: 1}, stats, 100, 0.2)
    assert balanced > skewed


# ---------------------------------------------------------------------------
# optimal plan search


def _exhaustive_best(sax, word, bps, th, fill_low, fill_high, alpha, w):
    segs = promotable_segments(word, bps.b)
    stats = segment_variances(sax, word, bps)
    lam_min, lam_max = fanout_range(len(sax), th, fill_low, fill_high, w)
    lam_max = min(lam_max, len(segs))
    lam_min = min(lam_min, lam_max)
    best_score, best_plan = -math.inf, None
    for lam in range(lam_min, lam_max + 1):
        for plan in combinations(segs, lam):
            dist = {}
            for sid in promote_sids(sax, word, plan, bps.b):
                dist[int(sid)] = dist.get(int(sid), 0) + 1
            score = score_plan(plan, dist, stats, th, alpha)
            if score > best_score or (score == best_score and plan < best_plan):
                best_score, best_plan = score, plan
    return best_score, best_plan


def test_plan_search_equals_exhaustive_enumeration():
    rng = np.random.default_rng(23)
    bps = get_breakpoints(8)
    w, th = 8, 20
    checked = 0
    while checked < 200:
        word, sax = _random_node(rng, rng.integers(th + 1, 300), w)
        if not promotable_segments(word, 8):
            continue
        plan = find_optimal_plan(sax, word, bps, th, 0.5, 3.0, 0.2)
        score, segments = _exhaustive_best(sax, word, bps, th, 0.5, 3.0, 0.2, w)
        assert plan.score == score
        assert plan.segments == segments
        checked += 1


def test_plan_respects_fanout_band():
    rng = np.random.default_rng(24)
    bps = get_breakpoints(8)
    w, th = 8, 20
    for _ in range(50):
        word, sax = _random_node(rng, rng.integers(th + 1, 400), w)
        segs = promotable_segments(word, 8)
        if not segs:
            continue
        plan = find_optimal_plan(sax, word, bps, th, 0.5, 3.0, 0.2)
        lam_min, lam_max = fanout_range(len(sax), th, 0.5, 3.0, w)
        lam_max = min(lam_max, len(segs))
        lam_min = min(lam_min, lam_max)
        assert lam_min <= len(plan.segments) <= lam_max


def test_single_differing_segment_is_chosen():
    bps = get_breakpoints(8)
    word = ISaxWord.root(4)
    sax = np.full((40, 4), 100, dtype=np.uint8)
    sax[20:, 2] = 200  # only segment 2 separates the two groups
    plan = find_optimal_plan(sax, word, bps, th=30, fill_low=0.5,
                             fill_high=30.0, alpha=0.2)
    assert plan.segments == (2,)


def test_unsplittable_node_raises():
    bps = get_breakpoints(8)
    word = ISaxWord.from_arrays([1] * 4, [8] * 4)
    sax = np.full((40, 4), 1, dtype=np.uint8)
    with pytest.raises(UnsplittableNodeError):
        find_optimal_plan(sax, word, bps, 10, 0.5, 3.0, 0.2)


def test_search_is_deterministic():
    rng = np.random.default_rng(25)
    bps = get_breakpoints(8)
    word, sax = _random_node(rng, 150, 8)
    plans = {find_optimal_plan(sax, word, bps, 20, 0.5, 3.0, 0.2) for _ in range(3)}
    assert len(plans) == 1


# ---------------------------------------------------------------------------
# sid promotion


def test_promote_isax_reference_child():
    word = ISaxWord((1, 0b01, 0), (1, 2, 1))
    sax = np.array([0b10000000, 0b01000000, 0b00000000], dtype=np.uint8)
    sid, child = promote_isax(word, sax, (1,), 8)
    assert sid == 0
    assert child.prefixes == (1, 0b010, 0)
    assert child.lengths == (1, 3, 1)


def test_promote_full_width_root_takes_first_bits():
    word = ISaxWord.root(3)
    sax = np.array([0b10000000, 0b00000000, 0b11111111], dtype=np.uint8)
    sid, child = promote_isax(word, sax, (0, 1, 2), 8)
    assert sid == 0b101
    assert child.prefixes == (1, 0, 1)


def test_promoted_child_covers_the_series():
    rng = np.random.default_rng(26)
    for _ in range(100):
        word, sax = _random_node(rng, 1, 6)
        segs = promotable_segments(word, 8)
        if not segs:
            continue
        plan = tuple(sorted(rng.choice(segs, size=rng.integers(1, len(segs) + 1),
                                       replace=False)))
        sid, child = promote_isax(word, sax[0], plan, 8)
        assert child.covers(sax[0], 8)
        assert child_isax(word, plan, sid, 8) == child


def test_vectorized_sids_match_scalar_promotion():
    rng = np.random.default_rng(27)
    word, sax = _random_node(rng, 50, 6)
    segs = promotable_segments(word, 8)
    plan = tuple(segs[:3]) or tuple(segs)
    if not plan:
        pytest.skip("degenerate random word")
    sids = promote_sids(sax, word, plan, 8)
    for row, sid in zip(sax, sids):
        assert promote_isax(word, row, plan, 8)[0] == sid


# ---------------------------------------------------------------------------
# binary baseline


def test_binary_baseline_prefers_even_split():
    word = ISaxWord.root(3)
    sax = np.zeros((40, 3), dtype=np.uint8)
    sax[:10, 0] = 255
    sax[:20, 1] = 255  # exactly balanced on segment 1
    sax[:35, 2] = 255
    plan = binary_baseline_plan(sax, word, 8)
    assert plan.segments == (1,)


def test_binary_baseline_tie_breaks_to_lowest_segment():
    word = ISaxWord.root(3)
    sax = np.zeros((40, 3), dtype=np.uint8)
    plan = binary_baseline_plan(sax, word, 8)
    assert plan.segments == (0,)


def test_binary_baseline_balance_is_minimal():
    rng = np.random.default_rng(28)
    for _ in range(50):
        word, sax = _random_node(rng, 100, 6)
        segs = promotable_segments(word, 8)
        if not segs:
            continue
        plan = binary_baseline_plan(sax, word, 8)
        chosen = plan.segments[0]
        def imbalance(seg):
            ones = sum(promote_sids(sax, word, (seg,), 8))
            return abs(len(sax) - 2 * ones)
        assert imbalance(chosen) == min(imbalance(s) for s in segs)
