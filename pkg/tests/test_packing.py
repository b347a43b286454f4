import numpy as np
import pytest

from saxtree.packing import PackDraft, demotion_cost, pack_isax, pack_nodes
from saxtree.summarization import ISaxWord


def _draft(lam, sid, size=10):
    return PackDraft(lam=lam, value=sid, wildcard=0, size=size, member_sids=[sid])


# ---------------------------------------------------------------------------
# demotion cost


def test_reference_two_bit_demotion():
    # 0010 + 0100 -> 0**0, two demoted bits
    pack = _draft(4, 0b0010)
    assert demotion_cost(pack, 0b0100, 10, rho=0.5, th=100) == 2


def test_reference_three_bit_demotion_rejected_by_budget():
    # 0010 + 0101 -> 0***, three demoted bits; over floor(0.5 * 4) = 2
    pack = _draft(4, 0b0010)
    assert demotion_cost(pack, 0b0101, 10, rho=0.5, th=100) is None
    assert demotion_cost(pack, 0b0101, 10, rho=0.8, th=100) == 3


def test_covered_candidate_costs_zero():
    pack = PackDraft(lam=4, value=0b0000, wildcard=0b0110, size=10,
                     member_sids=[0b0010, 0b0100])
    assert pack.covers(0b0110)
    assert demotion_cost(pack, 0b0110, 5, rho=0.5, th=100) == 0


def test_capacity_overflow_rejected():
    pack = _draft(4, 0b0010, size=95)
    assert demotion_cost(pack, 0b0010, 6, rho=0.5, th=100) is None


# ---------------------------------------------------------------------------
# packing


def _check_invariants(packs, lam, rho, th, sids):
    placed = []
    for pack in packs:
        assert pack.size <= th
        assert pack.demotion_bits <= int(rho * lam)
        for sid in pack.member_sids:
            assert pack.covers(sid)
        placed.extend(pack.member_sids)
    assert sorted(placed) == sorted(sids)


def test_all_small_nodes_fit_one_pack():
    rng = np.random.default_rng(0)
    nodes = [(0b00, 10), (0b01, 20), (0b10, 5)]
    packs = pack_nodes(nodes, lam=2, rho=1.0, th=100, rng=rng)
    assert len(packs) == 1
    assert packs[0].size == 35


def test_incompatible_sids_force_two_packs():
    rng = np.random.default_rng(0)
    nodes = [(0b0000, 10), (0b1111, 10)]
    packs = pack_nodes(nodes, lam=4, rho=0.5, th=100, rng=rng)
    assert len(packs) == 2


def test_every_node_placed_exactly_once_random():
    rng = np.random.default_rng(1)
    for _ in range(50):
        lam = int(rng.integers(2, 9))
        count = int(rng.integers(1, min(20, 1 << lam)))
        sids = rng.choice(1 << lam, size=count, replace=False)
        nodes = [(int(s), int(rng.integers(1, 40))) for s in sids]
        packs = pack_nodes(nodes, lam, rho=0.5, th=100,
                           rng=np.random.default_rng(7))
        _check_invariants(packs, lam, 0.5, 100, [s for s, _ in nodes])


def test_packing_deterministic_per_seed():
    nodes = [(s, 10 + s) for s in range(12)]
    a = pack_nodes(nodes, 4, 0.5, 60, np.random.default_rng(3))
    b = pack_nodes(nodes, 4, 0.5, 60, np.random.default_rng(3))
    assert [(p.value, p.wildcard, sorted(p.member_sids)) for p in a] == \
           [(p.value, p.wildcard, sorted(p.member_sids)) for p in b]


def test_seed_pack_count_follows_total_size():
    nodes = [(s, 50) for s in range(8)]  # total 400, th 100 -> 4 seeds
    packs = pack_nodes(nodes, 3, 1.0, 100, np.random.default_rng(5))
    assert len(packs) >= 4


# ---------------------------------------------------------------------------
# pack iSAX


def test_fixed_mask_extends_every_chosen_segment():
    parent = ISaxWord.root(4)
    word = pack_isax(value=0b101, wildcard=0, lam=3, parent_isax=parent,
                     csl=(0, 2, 3))
    assert word.lengths == (1, 0, 1, 1)
    assert word.prefixes == (1, 0, 0, 1)


def test_all_wildcard_mask_keeps_parent_word():
    parent = ISaxWord((1, 2), (1, 2))
    word = pack_isax(value=0, wildcard=0b11, lam=2, parent_isax=parent, csl=(0, 1))
    assert word == parent


def test_pack_word_covers_all_members():
    from saxtree.split import child_isax

    rng = np.random.default_rng(9)
    parent = ISaxWord.root(6)
    csl = (1, 3, 4)
    lam = 3
    for _ in range(30):
        count = int(rng.integers(2, 6))
        sids = rng.choice(1 << lam, size=count, replace=False)
        packs = pack_nodes([(int(s), 5) for s in sids], lam, rho=1.0, th=100,
                           rng=np.random.default_rng(2))
        for pack in packs:
            word = pack_isax(pack.value, pack.wildcard, lam, parent, csl)
            for sid in pack.member_sids:
                member = child_isax(parent, csl, sid, 8)
                # pack region must contain the member region segment-wise
                for j in range(6):
                    assert word.lengths[j] <= member.lengths[j]
                    shift = member.lengths[j] - word.lengths[j]
                    assert member.prefixes[j] >> shift == word.prefixes[j]
