"""Merging small sibling leaves into packs with bounded wildcard demotion.

A pack covers a set of sibling sids under one parent.  Its mask keeps the
bit positions on which all members agree and wildcards the rest; the
number of wildcarded (demoted) bits is capped at floor(rho * lam) so the
merged iSAX region stays tight enough to prune.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .summarization import ISaxWord

__all__ = ["PackDraft", "demotion_cost", "pack_nodes", "pack_isax"]


@dataclass
class PackDraft:
    """A pack under construction: fixed-bit pattern, wildcard mask, members."""

    lam: int
    value: int          # fixed bits (wildcard positions read as 0)
    wildcard: int       # 1-bits mark demoted positions
    size: int
    member_sids: list = field(default_factory=list)

    @property
    def demotion_bits(self) -> int:
        return int(self.wildcard).bit_count()

    def covers(self, sid: int) -> bool:
        return (sid ^ self.value) & ~self.wildcard & ((1 << self.lam) - 1) == 0


def demotion_cost(pack: PackDraft, candidate_sid: int, candidate_size: int,
                  rho: float, th: int):
    """Extra demotion bits if the candidate joins the pack, or None if the
    pack would exceed its demotion budget or overflow past ``th``."""
    new_wild = pack.wildcard | ((pack.value ^ candidate_sid) & ~pack.wildcard)
    cost = int(new_wild).bit_count() - pack.demotion_bits
    limit = int(rho * pack.lam)
    if int(new_wild).bit_count() > limit or pack.size + candidate_size > th:
        return None
    return cost


def _insert(pack: PackDraft, sid: int, size: int) -> None:
    pack.wildcard |= (pack.value ^ sid) & ~pack.wildcard
    pack.value &= ~pack.wildcard
    pack.size += size
    pack.member_sids.append(sid)


def pack_nodes(small_nodes, lam: int, rho: float, th: int, rng: np.random.Generator):
    """Assign small sibling leaves (sid, size) to packs.

    Seeds floor(sum_size / th) packs with randomly drawn nodes, then walks
    the remaining nodes in descending size order (ties by ascending sid),
    placing each into the qualified pack of least demotion cost and opening
    a new pack when none qualifies.
    """
    nodes = sorted(small_nodes, key=lambda ns: (-ns[1], ns[0]))
    if not nodes:
        return []
    sum_size = sum(size for _, size in nodes)
    n_seeds = min(sum_size // th, len(nodes))
    limit = int(rho * lam)

    packs: list = []
    seed_idx = set()
    if n_seeds > 0:
        chosen = rng.choice(len(nodes), size=n_seeds, replace=False)
        for i in chosen:
            sid, size = nodes[int(i)]
            packs.append(PackDraft(lam=lam, value=sid, wildcard=0, size=size,
                                   member_sids=[sid]))
            seed_idx.add(int(i))

    # parallel arrays for vectorized cost evaluation
    values = [p.value for p in packs]
    wilds = [p.wildcard for p in packs]
    sizes = [p.size for p in packs]

    for i, (sid, size) in enumerate(nodes):
        if i in seed_idx:
            continue
        target = -1
        if packs:
            v = np.asarray(values, dtype=np.uint64)
            wl = np.asarray(wilds, dtype=np.uint64)
            sz = np.asarray(sizes, dtype=np.int64)
            diff = (v ^ np.uint64(sid)) & ~wl
            new_wild = wl | diff
            total_bits = np.bitwise_count(new_wild).astype(np.int64)
            ok = (total_bits <= limit) & (sz + size <= th)
            if np.any(ok):
                cost = np.where(ok, total_bits - np.bitwise_count(wl).astype(np.int64),
                                np.iinfo(np.int64).max)
                target = int(np.argmin(cost))
        if target < 0:
            packs.append(PackDraft(lam=lam, value=sid, wildcard=0, size=size,
                                   member_sids=[sid]))
            values.append(sid)
            wilds.append(0)
            sizes.append(size)
        else:
            _insert(packs[target], sid, size)
            values[target] = packs[target].value
            wilds[target] = packs[target].wildcard
            sizes[target] = packs[target].size
    return packs


def pack_isax(value: int, wildcard: int, lam: int, parent_isax: ISaxWord, csl) -> ISaxWord:
    """Merged iSAX word: extend each fixed mask bit, leave wildcards coarse."""
    word = parent_isax
    for j, seg in enumerate(csl):
        pos = 1 << (lam - 1 - j)
        if wildcard & pos:
            continue
        bit = 1 if value & pos else 0
        word = word.extend(seg, bit)
    return word
