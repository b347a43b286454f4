"""The index tree: bulk build workflow, leaf materialization, persistence.

Building proceeds in five stages: (1) collect the SAX word of every series
into a table, (2) initialize the root, (3) recursively split every
overflowing node, (4) pack small sibling leaves, (5) stream the raw series
a second time into per-leaf files.  An optional duplication overlay copies
boundary series into neighboring subtrees without touching any iSAX word.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from pathlib import Path

import numpy as np

from .config import BuildConfig
from .dataset import count_series, iter_batches
from .packing import pack_isax, pack_nodes
from .split import (
    UnsplittableNodeError,
    binary_baseline_plan,
    child_isax,
    find_optimal_plan,
    promote_sids,
)
from .summarization import ISaxWord, compute_paa, get_breakpoints, paa_to_sax

log = logging.getLogger(__name__)

MAGIC = b"DMPYIDX1"
FORMAT_VERSION = 1

__all__ = [
    "IndexFormatError",
    "RoutingError",
    "InternalNode",
    "LeafNode",
    "PackNode",
    "LeafStore",
    "Index",
    "record_dtype",
    "build_sax_table",
    "build_index",
    "route_to_leaf",
    "index_stats",
    "serialize_index",
    "deserialize_index",
]


class IndexFormatError(Exception):
    """The on-disk index file is malformed, truncated, or incompatible."""


class RoutingError(Exception):
    """Tree traversal hit a missing routing entry."""


def record_dtype(n: int, w: int) -> np.dtype:
    """Leaf file record: raw values, SAX word, dataset ordinal."""
    return np.dtype([("values", "<f4", (n,)), ("sax", "u1", (w,)), ("ordinal", "<u8")])


# ---------------------------------------------------------------------------
# nodes


class InternalNode:
    is_leaf = False
    is_pack = False

    def __init__(self, isax: ISaxWord, csl):
        self.isax = isax
        self.csl = tuple(csl)
        self.routing: dict = {}
        self.size = 0           # live records in the subtree
        self.leaf_count = 0
        self.split_size = 0     # series count when the split was decided

    def children(self):
        """Distinct child nodes, ordered by their smallest sid."""
        seen = set()
        for sid in sorted(self.routing):
            child = self.routing[sid]
            if id(child) not in seen:
                seen.add(id(child))
                yield sid, child


class LeafNode:
    is_leaf = True
    is_pack = False

    def __init__(self, isax: ISaxWord):
        self.isax = isax
        self.file_id = -1
        self.size = 0                       # live records
        self.deleted = np.zeros(0, dtype=bool)

    @property
    def record_count(self) -> int:
        return len(self.deleted)


class PackNode(LeafNode):
    is_pack = True

    def __init__(self, isax: ISaxWord, lam: int, value: int, wildcard: int, member_sids):
        super().__init__(isax)
        self.lam = lam
        self.value = value
        self.wildcard = wildcard
        self.member_sids = tuple(member_sids)

    @property
    def demotion_bits(self) -> int:
        return int(self.wildcard).bit_count()

    def covers_sid(self, sid: int) -> bool:
        return (sid ^ self.value) & ~self.wildcard & ((1 << self.lam) - 1) == 0


# ---------------------------------------------------------------------------
# leaf files


class LeafStore:
    """Per-leaf record files plus adjacent deletion bit-vectors."""

    def __init__(self, directory, n: int, w: int):
        self.directory = Path(directory)
        self.dtype = record_dtype(n, w)
        self._cache: dict = {}

    def leaf_dir(self) -> Path:
        return self.directory / "leaves"

    def path(self, file_id: int) -> Path:
        return self.leaf_dir() / f"{file_id}.bin"

    def del_path(self, file_id: int) -> Path:
        return self.leaf_dir() / f"{file_id}.del"

    def invalidate(self, file_id: int) -> None:
        self._cache.pop(file_id, None)

    def read(self, file_id: int) -> np.ndarray:
        recs = self._cache.get(file_id)
        if recs is None:
            path = self.path(file_id)
            if path.exists():
                recs = np.fromfile(str(path), dtype=self.dtype)
            else:
                recs = np.empty(0, dtype=self.dtype)
            self._cache[file_id] = recs
        return recs

    def append(self, file_id: int, records: np.ndarray) -> None:
        self.invalidate(file_id)
        self.leaf_dir().mkdir(parents=True, exist_ok=True)
        with open(self.path(file_id), "ab") as fh:
            records.astype(self.dtype, copy=False).tofile(fh)

    def write(self, file_id: int, records: np.ndarray) -> None:
        self.invalidate(file_id)
        self.leaf_dir().mkdir(parents=True, exist_ok=True)
        records.astype(self.dtype, copy=False).tofile(str(self.path(file_id)))

    def overwrite_slot(self, file_id: int, slot: int, record: np.ndarray) -> None:
        self.invalidate(file_id)
        with open(self.path(file_id), "r+b") as fh:
            fh.seek(slot * self.dtype.itemsize)
            record.astype(self.dtype, copy=False).tofile(fh)

    def remove(self, file_id: int) -> None:
        self.invalidate(file_id)
        for path in (self.path(file_id), self.del_path(file_id)):
            if path.exists():
                path.unlink()

    def write_deleted(self, file_id: int, bits: np.ndarray) -> None:
        self.leaf_dir().mkdir(parents=True, exist_ok=True)
        packed = np.packbits(bits.astype(np.uint8), bitorder="little")
        with open(self.del_path(file_id), "wb") as fh:
            fh.write(struct.pack("<Q", len(bits)))
            fh.write(packed.tobytes())

    def read_deleted(self, file_id: int, record_count: int) -> np.ndarray:
        path = self.del_path(file_id)
        if not path.exists():
            return np.zeros(record_count, dtype=bool)
        with open(path, "rb") as fh:
            (count,) = struct.unpack("<Q", fh.read(8))
            packed = np.frombuffer(fh.read(), dtype=np.uint8)
        if count != record_count:
            raise IndexFormatError(
                f"deletion vector of leaf {file_id} covers {count} records, "
                f"file has {record_count}"
            )
        return np.unpackbits(packed, bitorder="little", count=count).astype(bool)


# ---------------------------------------------------------------------------
# the index


class Index:
    def __init__(self, config: BuildConfig, root: InternalNode, directory,
                 dataset_path: str, db_size: int):
        self.config = config
        self.root = root
        self.directory = Path(directory)
        self.dataset_path = str(dataset_path)
        self.db_size = db_size          # live primary series
        self.dup_count = 0
        self.next_file_id = 0
        self.next_ordinal = db_size
        self.breakpoints = get_breakpoints(config.b)
        self.store = LeafStore(directory, config.n, config.w)

    # -- summaries ---------------------------------------------------------

    def sax_of(self, series) -> np.ndarray:
        paa = compute_paa(series, self.config.w)
        return paa_to_sax(paa, self.breakpoints)

    # -- traversal ---------------------------------------------------------

    def nodes(self):
        """All distinct nodes in deterministic pre-order."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                children = [child for _, child in node.children()]
                stack.extend(reversed(children))

    def leaves(self):
        for node in self.nodes():
            if node.is_leaf:
                yield node

    def route_path(self, sax):
        """Routing path [(internal, sid), ...] ending at a leaf, or raise."""
        b = self.config.b
        node = self.root
        path = []
        while not node.is_leaf:
            sid = _sid_of(node, sax, b)
            child = node.routing.get(sid)
            if child is None:
                raise RoutingError(f"no routing entry for sid {sid:b}")
            path.append((node, sid))
            node = child
        return path, node


def _sid_of(node: InternalNode, sax, b: int) -> int:
    sid = 0
    lengths = node.isax.lengths
    for seg in node.csl:
        sid = (sid << 1) | ((int(sax[seg]) >> (b - lengths[seg] - 1)) & 1)
    return sid


def route_to_leaf(index: Index, sax) -> LeafNode:
    """Follow routing tables to the leaf or pack covering ``sax``."""
    return index.route_path(sax)[1]


# ---------------------------------------------------------------------------
# stage 1: SAX table


def _compute_tables(values: np.ndarray, config: BuildConfig, bps):
    if not np.all(np.isfinite(values)):
        raise ValueError("dataset contains non-finite values")
    paa = compute_paa(values, config.w)
    return paa, paa_to_sax(paa, bps)


def build_sax_table(dataset_path, config: BuildConfig, with_paa: bool = False):
    """First pass: one SAX word per series, streamed in buffer-sized batches."""
    bps = get_breakpoints(config.b)
    total = count_series(dataset_path, config.n)
    sax_table = np.empty((total, config.w), dtype=np.uint8)
    paa_table = np.empty((total, config.w), dtype=np.float64) if with_paa else None
    for start, batch in iter_batches(dataset_path, config.n, config.buffer_series):
        paa, sax = _compute_tables(batch, config, bps)
        sax_table[start : start + len(batch)] = sax
        if with_paa:
            paa_table[start : start + len(batch)] = paa
    if with_paa:
        return sax_table, paa_table
    return sax_table


# ---------------------------------------------------------------------------
# stage 3: recursive adaptive split


def _split_node(isax: ISaxWord, ordinals: np.ndarray, sax_table: np.ndarray,
                config: BuildConfig, bps, is_root: bool):
    if not is_root and len(ordinals) <= config.th:
        leaf = LeafNode(isax)
        leaf._ordinals = ordinals
        leaf.size = len(ordinals)
        return leaf

    sax_sub = sax_table[ordinals]
    if is_root and len(ordinals) <= config.th:
        # tiny collection: a root with a single catch-all leaf, no split
        node = InternalNode(isax, ())
        leaf = LeafNode(isax)
        leaf._ordinals = ordinals
        leaf.size = len(ordinals)
        node.routing[0] = leaf
        node.split_size = len(ordinals)
        node._ordinals = ordinals
        return node

    try:
        if is_root:
            plan = tuple(range(config.w))
        elif config.split_strategy == "binary":
            plan = binary_baseline_plan(sax_sub, isax, config.b).segments
        else:
            plan = find_optimal_plan(
                sax_sub, isax, bps, config.th, config.fill_low,
                config.fill_high, config.alpha,
            ).segments
    except UnsplittableNodeError:
        log.warning(
            "node with %d series (> th=%d) cannot be split further; "
            "keeping an oversized leaf", len(ordinals), config.th,
        )
        leaf = LeafNode(isax)
        leaf._ordinals = ordinals
        leaf.size = len(ordinals)
        return leaf

    node = InternalNode(isax, plan)
    node.split_size = len(ordinals)
    node._ordinals = ordinals
    sids = promote_sids(sax_sub, isax, plan, config.b)
    order = np.argsort(sids, kind="stable")
    sorted_sids = sids[order]
    sorted_ordinals = ordinals[order]
    cuts = np.flatnonzero(np.diff(sorted_sids)) + 1
    starts = np.concatenate(([0], cuts))
    stops = np.concatenate((cuts, [len(sorted_sids)]))
    for lo, hi in zip(starts, stops):
        sid = int(sorted_sids[lo])
        c_isax = child_isax(isax, plan, sid, config.b)
        child = _split_node(c_isax, sorted_ordinals[lo:hi], sax_table, config, bps, False)
        node.routing[sid] = child
    return node


# ---------------------------------------------------------------------------
# stage 4: leaf packing


def _pack_tree(root: InternalNode, config: BuildConfig, rng: np.random.Generator):
    for node in list(_internal_nodes(root)):
        lam = len(node.csl)
        if lam == 0:
            continue
        small = {}
        for sid, child in node.routing.items():
            if child.is_leaf and not child.is_pack and child.size < config.small_node_ratio * config.th:
                small[sid] = child
        if len(small) < 2:
            continue
        drafts = pack_nodes(
            [(sid, leaf.size) for sid, leaf in small.items()],
            lam, config.rho, config.th, rng,
        )
        for draft in drafts:
            if len(draft.member_sids) == 1:
                continue  # lone leaf: keep as-is, nothing merged
            isax = pack_isax(draft.value, draft.wildcard, lam, node.isax, node.csl)
            pack = PackNode(isax, lam, draft.value, draft.wildcard, sorted(draft.member_sids))
            pack.size = draft.size
            pack._member_ordinals = {
                sid: small[sid]._ordinals for sid in pack.member_sids
            }
            for sid in pack.member_sids:
                node.routing[sid] = pack


def _internal_nodes(root: InternalNode):
    stack = [root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            continue
        yield node
        children = [child for _, child in node.children()]
        stack.extend(reversed(children))


def _refresh_counts(node) -> tuple:
    """Recompute (size, leaf_count) bottom-up; returns the node's pair."""
    if node.is_leaf:
        return node.size, 1
    total = 0
    leaves = 0
    for _, child in node.children():
        s, lc = _refresh_counts(child)
        total += s
        leaves += lc
    node.size = total
    node.leaf_count = leaves
    return total, leaves


# ---------------------------------------------------------------------------
# fuzzy duplication overlay


def _primary_ordinals(leaf) -> int:
    if leaf.is_pack:
        return sum(len(v) for v in leaf._member_ordinals.values())
    return len(leaf._ordinals)


def _sid_member_ordinals(parent: InternalNode, sid: int):
    child = parent.routing.get(sid)
    if child is None:
        return None
    if child.is_pack:
        return child._member_ordinals.get(sid)
    return getattr(child, "_ordinals", None)


def _fuzzy_band_members(parent_isax: ISaxWord, seg: int, neighbor_bit: int,
                        ordinals, paa_table, f: float, bps):
    """Ordinals of neighbor series within f * region-width of the boundary."""
    b = bps.b
    p = parent_isax.prefixes[seg]
    shift = b - parent_isax.lengths[seg] - 1
    boundary = bps.bounds[((2 * p + 1) << shift)]
    n_pref = (p << 1) | neighbor_bit
    width = bps.pseudo[(n_pref + 1) << shift] - bps.pseudo[n_pref << shift]
    vals = paa_table[ordinals, seg]
    return ordinals[np.abs(vals - boundary) <= f * width]


def _route_build(node, sax_row, b: int):
    while node is not None and not node.is_leaf:
        node = node.routing.get(_sid_of(node, sax_row, b))
    return node


def fuzzy_duplicate(root: InternalNode, config: BuildConfig, bps,
                    sax_table: np.ndarray, paa_table: np.ndarray) -> int:
    """Copy boundary series into 1-bit-different sibling subtrees and packs.

    Runs on the finished structure; duplicates never alter an iSAX word,
    never overflow a leaf or pack past capacity, and each series is copied
    at most ``max_duplications`` times.  Returns the number of copies made.
    """
    f = config.fuzzy
    max_dup = config.max_duplications
    dup_counts = np.zeros(len(sax_table), dtype=np.int32)
    placed = 0

    def try_place(leaf, ordinal: int) -> bool:
        nonlocal placed
        if dup_counts[ordinal] >= max_dup:
            return False
        dups = leaf.__dict__.setdefault("_dups", [])
        dup_set = leaf.__dict__.setdefault("_dup_set", set())
        if ordinal in dup_set:
            return False
        if _primary_ordinals(leaf) + len(dups) + 1 > config.th:
            return False
        dups.append(ordinal)
        dup_set.add(ordinal)
        dup_counts[ordinal] += 1
        placed += 1
        return True

    for parent in _internal_nodes(root):
        lam = len(parent.csl)
        if lam == 0:
            continue
        # duplicates into internal children, spread over their own leaves
        for sid, child in parent.children():
            if child.is_leaf:
                continue
            for j, seg in enumerate(parent.csl):
                bitpos = 1 << (lam - 1 - j)
                nsid = sid ^ bitpos
                neighbor_ordinals = _sid_member_ordinals(parent, nsid)
                if neighbor_ordinals is None or len(neighbor_ordinals) == 0:
                    continue
                neighbor_bit = 1 if nsid & bitpos else 0
                band = _fuzzy_band_members(
                    parent.isax, seg, neighbor_bit, neighbor_ordinals,
                    paa_table, f, bps,
                )
                for o in band:
                    o = int(o)
                    if dup_counts[o] >= max_dup:
                        continue
                    leaf = _route_build(child, sax_table[o], config.b)
                    if leaf is not None:
                        try_place(leaf, o)
        # duplicates straight into packs
        seen_packs = set()
        for sid in sorted(parent.routing):
            pack = parent.routing[sid]
            if not pack.is_pack or id(pack) in seen_packs:
                continue
            seen_packs.add(id(pack))
            for m_sid in pack.member_sids:
                for j, seg in enumerate(parent.csl):
                    bitpos = 1 << (lam - 1 - j)
                    nsid = m_sid ^ bitpos
                    if pack.covers_sid(nsid):
                        continue
                    neighbor_ordinals = _sid_member_ordinals(parent, nsid)
                    if neighbor_ordinals is None or len(neighbor_ordinals) == 0:
                        continue
                    neighbor_bit = 1 if nsid & bitpos else 0
                    band = _fuzzy_band_members(
                        parent.isax, seg, neighbor_bit, neighbor_ordinals,
                        paa_table, f, bps,
                    )
                    for o in band:
                        try_place(pack, int(o))
    return placed


# ---------------------------------------------------------------------------
# stage 5: leaf materialization


def materialize_leaves(dataset_path, index: Index, sax_table: np.ndarray) -> None:
    """Second pass: stream the dataset into per-leaf record files."""
    config = index.config
    store = index.store
    store.leaf_dir().mkdir(parents=True, exist_ok=True)

    primary_fid = np.full(len(sax_table), -1, dtype=np.int64)
    dup_pairs = []  # (ordinal, file_id)
    for leaf in index.leaves():
        fid = leaf.file_id
        if leaf.is_pack:
            for sid in leaf.member_sids:
                primary_fid[leaf._member_ordinals[sid]] = fid
        else:
            primary_fid[leaf._ordinals] = fid
        for o in getattr(leaf, "_dups", ()):
            dup_pairs.append((o, fid))
    dup_pairs.sort()
    dup_ords = np.array([p[0] for p in dup_pairs], dtype=np.int64)
    dup_fids = np.array([p[1] for p in dup_pairs], dtype=np.int64)

    counts: dict = {}
    for start, batch in iter_batches(dataset_path, config.n, config.buffer_series):
        stop = start + len(batch)
        fids = primary_fid[start:stop]
        order = np.argsort(fids, kind="stable")
        sorted_fids = fids[order]
        cuts = np.flatnonzero(np.diff(sorted_fids)) + 1
        for chunk in np.split(order, cuts):
            fid = int(fids[chunk[0]])
            ordinals = chunk + start
            recs = np.empty(len(chunk), dtype=store.dtype)
            recs["values"] = batch[chunk]
            recs["sax"] = sax_table[ordinals]
            recs["ordinal"] = ordinals
            store.append(fid, recs)
            counts[fid] = counts.get(fid, 0) + len(chunk)
        lo, hi = np.searchsorted(dup_ords, [start, stop])
        if lo < hi:
            d_ords = dup_ords[lo:hi]
            d_fids = dup_fids[lo:hi]
            order = np.argsort(d_fids, kind="stable")
            cuts = np.flatnonzero(np.diff(d_fids[order])) + 1
            for chunk in np.split(order, cuts):
                fid = int(d_fids[chunk[0]])
                ordinals = d_ords[chunk]
                recs = np.empty(len(chunk), dtype=store.dtype)
                recs["values"] = batch[ordinals - start]
                recs["sax"] = sax_table[ordinals]
                recs["ordinal"] = ordinals
                store.append(fid, recs)
                counts[fid] = counts.get(fid, 0) + len(chunk)

    for leaf in index.leaves():
        rc = counts.get(leaf.file_id, 0)
        leaf.deleted = np.zeros(rc, dtype=bool)
        leaf.size = rc
        store.write_deleted(leaf.file_id, leaf.deleted)


# ---------------------------------------------------------------------------
# full build


def build_index(dataset_path, config: BuildConfig, index_dir) -> Index:
    """Run the five-stage bulk build and persist the result."""
    bps = get_breakpoints(config.b)
    index_dir = Path(index_dir)
    index_dir.mkdir(parents=True, exist_ok=True)
    db_size = count_series(dataset_path, config.n)

    with_paa = config.fuzzy is not None
    tables = build_sax_table(dataset_path, config, with_paa=with_paa)
    sax_table, paa_table = tables if with_paa else (tables, None)

    root = _split_node(ISaxWord.root(config.w), np.arange(db_size, dtype=np.int64),
                       sax_table, config, bps, True)
    rng = np.random.default_rng(config.rng_seed)
    if config.packing:
        _pack_tree(root, config, rng)
    _refresh_counts(root)

    index = Index(config, root, index_dir, dataset_path, db_size)
    if config.fuzzy is not None:
        index.dup_count = fuzzy_duplicate(root, config, bps, sax_table, paa_table)

    fid = 0
    for leaf in index.leaves():
        leaf.file_id = fid
        fid += 1
    index.next_file_id = fid

    materialize_leaves(dataset_path, index, sax_table)
    _refresh_counts(root)

    sax_table.tofile(str(index_dir / "sax_table.bin"))
    for node in index.nodes():
        for attr in ("_ordinals", "_member_ordinals", "_dups", "_dup_set"):
            node.__dict__.pop(attr, None)

    index.save()
    return index


# ---------------------------------------------------------------------------
# statistics


def index_stats(index: Index) -> dict:
    """Structural statistics recomputed by traversal."""
    node_count = 0
    leaf_count = 0
    total_live = 0

    def height(node):
        if node.is_leaf:
            return 0
        return 1 + max(height(child) for _, child in node.children())

    for node in index.nodes():
        node_count += 1
        if node.is_leaf:
            leaf_count += 1
            total_live += node.size
    th = index.config.th
    return {
        "node_count": node_count,
        "leaf_count": leaf_count,
        "height": height(index.root),
        "fill_factor": index.db_size / (leaf_count * th) if leaf_count else 0.0,
        "live_records": total_live,
        "db_size": index.db_size,
        "dup_count": index.dup_count,
    }


# ---------------------------------------------------------------------------
# serialization

_NODE_INTERNAL, _NODE_LEAF, _NODE_PACK = 0, 1, 2


def _write_isax(buf: bytearray, isax: ISaxWord):
    buf.extend(bytes(isax.prefixes))
    buf.extend(bytes(isax.lengths))


def _read_isax(view, off: int, w: int):
    prefixes = tuple(view[off : off + w])
    lengths = tuple(view[off + w : off + 2 * w])
    return ISaxWord(prefixes, lengths), off + 2 * w


def _serialize_node(buf: bytearray, node, refs: dict):
    refs[id(node)] = len(refs)
    if node.is_leaf:
        buf.append(_NODE_PACK if node.is_pack else _NODE_LEAF)
        _write_isax(buf, node.isax)
        buf.extend(struct.pack("<iI", node.file_id, node.record_count))
        if node.is_pack:
            buf.extend(struct.pack("<BQQH", node.lam, node.value, node.wildcard,
                                   len(node.member_sids)))
            for sid in node.member_sids:
                buf.extend(struct.pack("<I", sid))
        return
    buf.append(_NODE_INTERNAL)
    _write_isax(buf, node.isax)
    buf.extend(struct.pack("<QB", node.split_size, len(node.csl)))
    buf.extend(bytes(node.csl))
    entries = sorted(node.routing)
    buf.extend(struct.pack("<I", len(entries)))
    for sid in entries:
        child = node.routing[sid]
        if id(child) in refs:
            buf.extend(struct.pack("<IBI", sid, 1, refs[id(child)]))
        else:
            buf.extend(struct.pack("<IBI", sid, 0, 0))
            _serialize_node(buf, child, refs)


def serialize_index(index: Index) -> bytes:
    header = {
        "config": index.config.to_dict(),
        "dataset_path": index.dataset_path,
        "db_size": index.db_size,
        "dup_count": index.dup_count,
        "next_file_id": index.next_file_id,
        "next_ordinal": index.next_ordinal,
        "stats": {k: v for k, v in index_stats(index).items()
                  if k in ("node_count", "leaf_count", "height")},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    buf = bytearray()
    buf.extend(MAGIC)
    buf.extend(struct.pack("<H", FORMAT_VERSION))
    buf.extend(struct.pack("<I", len(header_bytes)))
    buf.extend(header_bytes)
    _serialize_node(buf, index.root, {})
    digest = hashlib.blake2b(bytes(buf), digest_size=8).digest()
    buf.extend(digest)
    return bytes(buf)


def _parse_node(data: bytes, off: int, w: int, nodes_by_ref: list):
    kind = data[off]
    off += 1
    isax, off = _read_isax(data, off, w)
    if kind in (_NODE_LEAF, _NODE_PACK):
        file_id, record_count = struct.unpack_from("<iI", data, off)
        off += 8
        if kind == _NODE_PACK:
            lam, value, wildcard, n_members = struct.unpack_from("<BQQH", data, off)
            off += 19
            sids = []
            for _ in range(n_members):
                (sid,) = struct.unpack_from("<I", data, off)
                off += 4
                sids.append(sid)
            node = PackNode(isax, lam, int(value), int(wildcard), sids)
        else:
            node = LeafNode(isax)
        node.file_id = file_id
        node.deleted = np.zeros(record_count, dtype=bool)
        nodes_by_ref.append(node)
        return node, off
    split_size, n_csl = struct.unpack_from("<QB", data, off)
    off += 9
    csl = tuple(data[off : off + n_csl])
    off += n_csl
    node = InternalNode(isax, csl)
    node.split_size = int(split_size)
    nodes_by_ref.append(node)
    (n_entries,) = struct.unpack_from("<I", data, off)
    off += 4
    for _ in range(n_entries):
        sid, backref, ref = struct.unpack_from("<IBI", data, off)
        off += 9
        if backref:
            node.routing[sid] = nodes_by_ref[ref]
        else:
            child, off = _parse_node(data, off, w, nodes_by_ref)
            node.routing[sid] = child
    return node, off


def deserialize_index(data: bytes, directory) -> Index:
    if len(data) < len(MAGIC) + 2 + 4 + 8:
        raise IndexFormatError("index file too short")
    if data[: len(MAGIC)] != MAGIC:
        raise IndexFormatError("bad magic number")
    (version,) = struct.unpack_from("<H", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported format version {version}")
    payload, digest = data[:-8], data[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != digest:
        raise IndexFormatError("checksum mismatch")
    off = len(MAGIC) + 2
    (header_len,) = struct.unpack_from("<I", data, off)
    off += 4
    header = json.loads(payload[off : off + header_len].decode())
    off += header_len
    config = BuildConfig(**header["config"])
    nodes_by_ref: list = []
    root, off = _parse_node(payload, off, config.w, nodes_by_ref)
    if off != len(payload):
        raise IndexFormatError("trailing bytes after the node records")

    index = Index(config, root, directory, header["dataset_path"], header["db_size"])
    index.dup_count = header["dup_count"]
    index.next_file_id = header["next_file_id"]
    index.next_ordinal = header["next_ordinal"]

    for leaf in index.leaves():
        leaf.deleted = index.store.read_deleted(leaf.file_id, leaf.record_count)
        leaf.size = leaf.record_count - int(np.count_nonzero(leaf.deleted))
    _refresh_counts(root)

    stats = index_stats(index)
    for key, expected in header["stats"].items():
        if stats[key] != expected:
            raise IndexFormatError(
                f"stored {key}={expected} disagrees with recomputed {stats[key]}"
            )
    return index


def save_index(index: Index) -> Path:
    """Write the index file atomically (no partial file on failure)."""
    target = index.directory / "index.bin"
    tmp = index.directory / "index.bin.tmp"
    data = serialize_index(index)
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, target)
    return target


def load_index(directory) -> Index:
    directory = Path(directory)
    with open(directory / "index.bin", "rb") as fh:
        data = fh.read()
    return deserialize_index(data, directory)


Index.save = lambda self: save_index(self)
Index.load = staticmethod(load_index)
