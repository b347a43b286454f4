"""Insertion and deletion with structural maintenance.

Single-writer operations: inserts reuse deleted slots, overflowing leaves
split in place, full packs shed the target member, and subtrees drifting
far outside the fanout band are rebuilt and swapped in atomically.
"""

from __future__ import annotations

import logging

import numpy as np

from .index import (
    Index,
    InternalNode,
    LeafNode,
    RoutingError,
    _refresh_counts,
    _pack_tree,
    _sid_of,
    _split_node,
)
from .split import child_isax
from .summarization import ISaxWord

log = logging.getLogger(__name__)

__all__ = ["insert_series", "delete_series", "maybe_resplit"]


def _new_leaf(index: Index, isax: ISaxWord) -> LeafNode:
    leaf = LeafNode(isax)
    leaf.file_id = index.next_file_id
    index.next_file_id += 1
    return leaf


def _route_or_create(index: Index, sax):
    """Like route_path, but materializes missing leaves along the way."""
    b = index.config.b
    node = index.root
    path = []
    while not node.is_leaf:
        sid = _sid_of(node, sax, b)
        child = node.routing.get(sid)
        if child is None:
            child = _new_leaf(index, child_isax(node.isax, node.csl, sid, b))
            node.routing[sid] = child
        path.append((node, sid))
        node = child
    return path, node


def _live_records(index: Index, leaf: LeafNode) -> np.ndarray:
    recs = index.store.read(leaf.file_id)
    return recs[~leaf.deleted[: len(recs)]]


def _member_mask(parent: InternalNode, sid: int, recs: np.ndarray, b: int) -> np.ndarray:
    """Which records of a pack belong to the member routed through ``sid``."""
    mask = np.zeros(len(recs), dtype=bool)
    for i, row in enumerate(recs["sax"]):
        mask[i] = _sid_of(parent, row, b) == sid
    return mask


def _rewrite_leaf(index: Index, leaf: LeafNode, recs: np.ndarray) -> None:
    """Replace a leaf's file with compacted live records."""
    index.store.write(leaf.file_id, recs)
    leaf.deleted = np.zeros(len(recs), dtype=bool)
    leaf.size = len(recs)
    index.store.write_deleted(leaf.file_id, leaf.deleted)


def _extract_member(index: Index, parent: InternalNode, sid: int) -> LeafNode:
    """Pull one member out of a full pack into its own leaf."""
    b = index.config.b
    pack = parent.routing[sid]
    recs = _live_records(index, pack)
    mask = _member_mask(parent, sid, recs, b)

    leaf = _new_leaf(index, child_isax(parent.isax, parent.csl, sid, b))
    _rewrite_leaf(index, leaf, recs[mask])
    _rewrite_leaf(index, pack, recs[~mask])
    pack.member_sids = tuple(s for s in pack.member_sids if s != sid)
    parent.routing[sid] = leaf
    if not pack.member_sids or pack.size == 0:
        _drop_leaf(index, parent, pack)

    parent._extractions = getattr(parent, "_extractions", 0) + 1
    lam = len(parent.csl)
    if lam and parent._extractions >= (1 << lam) // 4:
        _repack_children(index, parent)
        parent._extractions = 0
    return leaf


def _repack_children(index: Index, parent: InternalNode) -> None:
    """Dissolve packs under a parent and re-run packing over its small leaves."""
    from .packing import pack_isax, pack_nodes
    from .index import PackNode

    config = index.config
    b = config.b
    lam = len(parent.csl)
    # explode packs into per-member plain leaves
    for sid in sorted(parent.routing):
        node = parent.routing[sid]
        if not node.is_pack:
            continue
        recs = _live_records(index, node)
        for m_sid in node.member_sids:
            if parent.routing.get(m_sid) is not node:
                continue
            mask = _member_mask(parent, m_sid, recs, b)
            leaf = _new_leaf(index, child_isax(parent.isax, parent.csl, m_sid, b))
            _rewrite_leaf(index, leaf, recs[mask])
            parent.routing[m_sid] = leaf
        index.store.remove(node.file_id)

    small = {
        sid: leaf for sid, leaf in parent.routing.items()
        if leaf.is_leaf and not leaf.is_pack
        and leaf.size < config.small_node_ratio * config.th
    }
    if len(small) < 2:
        return
    rng = np.random.default_rng(config.rng_seed)
    drafts = pack_nodes([(sid, leaf.size) for sid, leaf in small.items()],
                        lam, config.rho, config.th, rng)
    for draft in drafts:
        if len(draft.member_sids) == 1:
            continue
        isax = pack_isax(draft.value, draft.wildcard, lam, parent.isax, parent.csl)
        pack = PackNode(isax, lam, draft.value, draft.wildcard,
                        sorted(draft.member_sids))
        pack.file_id = index.next_file_id
        index.next_file_id += 1
        parts = [_live_records(index, small[s]) for s in pack.member_sids]
        _rewrite_leaf(index, pack, np.concatenate(parts))
        for s in pack.member_sids:
            index.store.remove(small[s].file_id)
            parent.routing[s] = pack


def _split_leaf(index: Index, parent: InternalNode, sid: int, leaf: LeafNode) -> None:
    """Replace an overflowing leaf with a freshly split subtree.

    SAX words come back from the leaf file; the new children are plain
    leaves (no packing at this scale)."""
    from .summarization import get_breakpoints

    config = index.config
    recs = _live_records(index, leaf)
    subtree = _split_node(leaf.isax, np.arange(len(recs), dtype=np.int64),
                          recs["sax"], config, get_breakpoints(config.b), False)
    _materialize_subtree(index, subtree, recs)
    parent.routing[sid] = subtree
    index.store.remove(leaf.file_id)


def _materialize_subtree(index: Index, subtree, recs: np.ndarray) -> None:
    """Assign file ids and write records for an in-memory rebuilt subtree.

    Leaves carry ``_ordinals`` indices into ``recs`` from the split step.
    """
    stack = [subtree]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            if node.file_id < 0:
                node.file_id = index.next_file_id
                index.next_file_id += 1
            if node.is_pack:
                idx = np.concatenate(
                    [node._member_ordinals[s] for s in node.member_sids])
            else:
                idx = node._ordinals
            _rewrite_leaf(index, node, recs[np.sort(idx)])
            for attr in ("_ordinals", "_member_ordinals"):
                node.__dict__.pop(attr, None)
        else:
            node.__dict__.pop("_ordinals", None)
            seen = set()
            for _, child in node.children():
                if id(child) not in seen:
                    seen.add(id(child))
                    stack.append(child)


def insert_series(index: Index, series) -> int:
    """Add one series; returns its ordinal."""
    s = np.asarray(series, dtype=np.float64)
    if s.shape != (index.config.n,):
        raise ValueError(f"series must have shape ({index.config.n},)")
    config = index.config
    sax = index.sax_of(s)
    ordinal = index.next_ordinal

    path, leaf = _route_or_create(index, sax)
    if leaf.is_pack and leaf.size >= config.th:
        parent, sid = path[-1]
        _extract_member(index, parent, sid)
        path, leaf = _route_or_create(index, sax)

    record = np.zeros(1, dtype=index.store.dtype)
    record["values"] = s
    record["sax"] = sax
    record["ordinal"] = ordinal

    slots = np.flatnonzero(leaf.deleted)
    if len(slots):
        slot = int(slots[0])
        index.store.overwrite_slot(leaf.file_id, slot, record)
        leaf.deleted[slot] = False
    else:
        index.store.append(leaf.file_id, record)
        leaf.deleted = np.append(leaf.deleted, False)
    leaf.size += 1
    index.store.write_deleted(leaf.file_id, leaf.deleted)

    if not leaf.is_pack and leaf.size > config.th:
        parent, sid = path[-1]
        _split_leaf(index, parent, sid, leaf)

    index.next_ordinal = ordinal + 1
    index.db_size += 1
    _refresh_counts(index.root)
    return ordinal


def _drop_leaf(index: Index, parent: InternalNode, leaf: LeafNode) -> None:
    for sid in [s for s, child in parent.routing.items() if child is leaf]:
        del parent.routing[sid]
    index.store.remove(leaf.file_id)


def _mark_deleted(index: Index, leaf: LeafNode, slot: int) -> None:
    leaf.deleted[slot] = True
    leaf.size -= 1
    index.store.write_deleted(leaf.file_id, leaf.deleted)


def delete_series(index: Index, series=None, ordinal: int | None = None) -> int:
    """Remove one live series, by exact values and/or ordinal.

    Returns the ordinal removed.  With several exact-value matches the
    lowest live ordinal goes.  When the index holds duplicated boundary
    copies, every copy of the ordinal is marked deleted.
    """
    if series is None and ordinal is None:
        raise ValueError("need a series, an ordinal, or both")

    if series is not None:
        s = np.asarray(series, dtype=np.float64)
        if s.shape != (index.config.n,):
            raise ValueError(f"series must have shape ({index.config.n},)")
        sax = index.sax_of(s)
        try:
            path, leaf = index.route_path(sax)
        except RoutingError:
            raise KeyError("series not found") from None
        recs = index.store.read(leaf.file_id)
        live = ~leaf.deleted[: len(recs)]
        mask = live & np.all(recs["values"] == s.astype(np.float32), axis=1)
        if ordinal is not None:
            mask &= recs["ordinal"] == ordinal
        if not np.any(mask):
            raise KeyError("series not found")
        hits = np.flatnonzero(mask)
        slot = int(hits[np.argmin(recs["ordinal"][hits])])
        ordinal = int(recs["ordinal"][slot])
        parent = path[-1][0] if path else None
        _mark_deleted(index, leaf, slot)
    else:
        parent = leaf = None
        for p, l, slot in _find_ordinal(index, ordinal):
            parent, leaf = p, l
            _mark_deleted(index, leaf, slot)
            break
        if leaf is None:
            raise KeyError(f"ordinal {ordinal} not found")

    if index.dup_count > 0:
        for p, other, slot in _find_ordinal(index, ordinal):
            if other is not leaf:
                _mark_deleted(index, other, slot)
                index.dup_count -= 1

    if leaf.size == 0 and parent is not None:
        _drop_leaf(index, parent, leaf)

    index.db_size -= 1
    _refresh_counts(index.root)
    return ordinal


def _find_ordinal(index: Index, ordinal: int):
    """Yield (parent, leaf, slot) for every live copy of an ordinal."""
    def walk(node, parent):
        if node.is_leaf:
            recs = index.store.read(node.file_id)
            hits = np.flatnonzero(
                (recs["ordinal"] == ordinal) & ~node.deleted[: len(recs)])
            for slot in hits:
                yield parent, node, int(slot)
            return
        for _, child in node.children():
            yield from walk(child, node)
    yield from walk(index.root, None)


def maybe_resplit(index: Index, node: InternalNode) -> bool:
    """Rebuild a subtree whose size left the fanout band by the hysteresis
    margin; returns True when a rebuild happened."""
    from .summarization import get_breakpoints

    if node.is_leaf:
        raise ValueError("re-split applies to internal nodes")
    config = index.config
    lam = len(node.csl)
    if lam == 0:
        return False
    capacity = config.th * (1 << lam)
    if not (node.size > 2 * config.fill_high * capacity
            or node.size < config.fill_low * capacity / 2):
        return False

    recs = np.concatenate([_live_records(index, leaf)
                           for leaf in _subtree_leaves_distinct(node)])
    order = np.argsort(recs["ordinal"], kind="stable")
    recs = recs[order]
    old_files = [leaf.file_id for leaf in _subtree_leaves_distinct(node)]

    bps = get_breakpoints(config.b)
    rebuilt = _split_node(node.isax, np.arange(len(recs), dtype=np.int64),
                          recs["sax"], config, bps, False)
    if not rebuilt.is_leaf and config.packing:
        _pack_tree(rebuilt, config, np.random.default_rng(config.rng_seed))
    _materialize_subtree(index, rebuilt, recs)
    _refresh_counts(rebuilt)

    # atomic swap: the new subtree is complete before any pointer changes
    if node is index.root:
        if rebuilt.is_leaf:
            wrapper = InternalNode(node.isax, ())
            wrapper.routing[0] = rebuilt
            rebuilt = wrapper
        index.root = rebuilt
    else:
        parent, sids = _find_parent(index.root, node)
        for sid in sids:
            parent.routing[sid] = rebuilt
    for fid in old_files:
        index.store.remove(fid)
    _refresh_counts(index.root)
    return True


def _subtree_leaves_distinct(node):
    seen = set()
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur.is_leaf:
            if id(cur) not in seen:
                seen.add(id(cur))
                yield cur
        else:
            children = [child for _, child in cur.children()]
            stack.extend(reversed(children))


def _find_parent(root, target):
    stack = [root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            continue
        sids = [sid for sid, child in node.routing.items() if child is target]
        if sids:
            return node, sids
        stack.extend(child for _, child in node.children())
    raise RoutingError("node not found in tree")
