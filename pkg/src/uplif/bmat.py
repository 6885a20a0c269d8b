"""Balanced Model Adjustment Tree (BMAT).

Boundary nodes created by segment splits partition the key space; each node
points at the segment owning the range it starts. Nodes carry a signed
update weight and the tree is augmented with subtree weight sums, so one
descent yields the bias (signed count of buffered updates below a key), a
buffered value hit, and the owning segment.

Two interchangeable backends: a red-black tree (RBMAT) and a B+ tree
(B+MAT). Boundaries are ordered by (key, flag): flag 0 starts its range at
the key, flag 1 starts just after it, which is how a split's upper boundary
keeps its own key inside the middle segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Optional

import numpy as np

from .model import ModelConfig
from .nullifier import DensityModel, GappedSegment, expand_segment, place_between

__all__ = [
    "Backend",
    "UpdateOutcome",
    "DeleteOutcome",
    "Adjustment",
    "PerfMeasures",
    "Bmat",
]

RED = True
BLACK = False

DEFAULT_BRANCHING = 32


class Backend(Enum):
    RBMAT = "rbmat"
    BPMAT = "bpmat"


class UpdateOutcome(Enum):
    UPDATED_NODE = "updated-node"
    IN_GAP = "in-gap"
    SEGMENT_SPLIT = "segment-split"


class DeleteOutcome(Enum):
    REMOVED = "removed"
    TOMBSTONED = "tombstoned"
    NOT_FOUND = "not-found"


@dataclass
class Adjustment:
    bias: int
    hit: Optional[object]
    segment: GappedSegment
    nodes_visited: int = 0


@dataclass(frozen=True)
class PerfMeasures:
    height: int
    granularity: int
    error_scaling: float
    model_count: int
    node_count: int
    segment_count: int
    live_keys: int


@dataclass
class Entry:
    ckey: tuple[int, int]
    value: Optional[object]
    weight: int
    seg: GappedSegment


# ---------------------------------------------------------------------------
# Red-black backend
# ---------------------------------------------------------------------------


class _RbNode:
    __slots__ = ("ckey", "value", "weight", "agg", "seg", "left", "right", "parent", "red")

    def __init__(self, ckey, seg, weight, value):
        self.ckey = ckey
        self.value = value
        self.weight = weight
        self.agg = weight
        self.seg = seg
        self.left = None
        self.right = None
        self.parent = None
        self.red = RED


class _RbBackend:
    kind = Backend.RBMAT

    def __init__(self):
        nil = _RbNode((0, 0), None, 0, None)
        nil.red = BLACK
        nil.agg = 0
        nil.left = nil
        nil.right = nil
        nil.parent = nil
        self.nil = nil
        self.root = nil
        self.count = 0

    # -- queries --

    def find(self, ckey) -> Optional[_RbNode]:
        node = self.root
        while node is not self.nil:
            if ckey < node.ckey:
                node = node.left
            elif ckey > node.ckey:
                node = node.right
            else:
                return node
        return None

    def descend(self, ckey):
        """Returns (bias, exact_node, owner_node, nodes_visited)."""
        bias = 0
        owner = None
        visited = 0
        node = self.root
        while node is not self.nil:
            visited += 1
            if ckey < node.ckey:
                node = node.left
            elif ckey == node.ckey:
                bias += node.left.agg
                return bias, node, node, visited
            else:
                bias += node.left.agg + node.weight
                owner = node
                node = node.right
        return bias, None, owner, visited

    def entries(self) -> Iterator[_RbNode]:
        stack = []
        node = self.root
        while stack or node is not self.nil:
            while node is not self.nil:
                stack.append(node)
                node = node.left
            node = stack.pop()
            yield node
            node = node.right

    def height(self) -> int:
        if self.root is self.nil:
            return 0
        best = 0
        stack = [(self.root, 1)]
        while stack:
            node, d = stack.pop()
            if d > best:
                best = d
            if node.left is not self.nil:
                stack.append((node.left, d + 1))
            if node.right is not self.nil:
                stack.append((node.right, d + 1))
        return best

    def iter_segs(self):
        node = self.root
        stack = []
        while stack or node is not self.nil:
            while node is not self.nil:
                stack.append(node)
                node = node.left
            node = stack.pop()
            yield node.seg
            node = node.right

    def stats_walk(self):
        """(height, min positive live, max alpha, model refs, segs, live keys)
        in one traversal."""
        height = 0
        gran = None
        max_alpha = 0.0
        models = 0
        segs = 0
        live = 0
        if self.root is not self.nil:
            stack = [(self.root, 1)]
            while stack:
                node, d = stack.pop()
                if d > height:
                    height = d
                seg = node.seg
                segs += 1
                lc = seg.live_count
                live += lc
                if lc > 0 and (gran is None or lc < gran):
                    gran = lc
                if seg.alpha > max_alpha:
                    max_alpha = seg.alpha
                if seg.model is not None:
                    models += 1
                if node.left is not self.nil:
                    stack.append((node.left, d + 1))
                if node.right is not self.nil:
                    stack.append((node.right, d + 1))
        return height, gran, max_alpha, models, segs, live

    # -- mutation --

    def insert(self, ckey, seg, weight, value=None) -> _RbNode:
        parent = self.nil
        cur = self.root
        while cur is not self.nil:
            parent = cur
            cur = cur.left if ckey < cur.ckey else cur.right
        node = _RbNode(ckey, seg, weight, value)
        node.left = self.nil
        node.right = self.nil
        node.parent = parent
        if parent is self.nil:
            self.root = node
        elif ckey < parent.ckey:
            parent.left = node
        else:
            parent.right = node
        self.count += 1
        if weight:
            cur = node.parent
            while cur is not self.nil:
                cur.agg += weight
                cur = cur.parent
        self._insert_fixup(node)
        return node

    def weight_delta(self, node: _RbNode, delta: int) -> None:
        node.weight += delta
        cur = node
        while cur is not self.nil:
            cur.agg += delta
            cur = cur.parent

    def _recompute_agg(self, node: _RbNode) -> None:
        node.agg = node.left.agg + node.right.agg + node.weight

    def _rotate_left(self, x: _RbNode) -> None:
        y = x.right
        x.right = y.left
        if y.left is not self.nil:
            y.left.parent = x
        y.parent = x.parent
        if x.parent is self.nil:
            self.root = y
        elif x is x.parent.left:
            x.parent.left = y
        else:
            x.parent.right = y
        y.left = x
        x.parent = y
        self._recompute_agg(x)
        self._recompute_agg(y)

    def _rotate_right(self, y: _RbNode) -> None:
        x = y.left
        y.left = x.right
        if x.right is not self.nil:
            x.right.parent = y
        x.parent = y.parent
        if y.parent is self.nil:
            self.root = x
        elif y is y.parent.right:
            y.parent.right = x
        else:
            y.parent.left = x
        x.right = y
        y.parent = x
        self._recompute_agg(y)
        self._recompute_agg(x)

    def _insert_fixup(self, z: _RbNode) -> None:
        while z.parent.red is RED:
            if z.parent is z.parent.parent.left:
                y = z.parent.parent.right
                if y.red is RED:
                    z.parent.red = BLACK
                    y.red = BLACK
                    z.parent.parent.red = RED
                    z = z.parent.parent
                else:
                    if z is z.parent.right:
                        z = z.parent
                        self._rotate_left(z)
                    z.parent.red = BLACK
                    z.parent.parent.red = RED
                    self._rotate_right(z.parent.parent)
            else:
                y = z.parent.parent.left
                if y.red is RED:
                    z.parent.red = BLACK
                    y.red = BLACK
                    z.parent.parent.red = RED
                    z = z.parent.parent
                else:
                    if z is z.parent.left:
                        z = z.parent
                        self._rotate_right(z)
                    z.parent.red = BLACK
                    z.parent.parent.red = RED
                    self._rotate_left(z.parent.parent)
        self.root.red = BLACK

    # -- bulk construction --

    @classmethod
    def build(cls, items: list[Entry]) -> "_RbBackend":
        t = cls()
        n = len(items)
        if n == 0:
            return t
        max_depth = n.bit_length()

        def rec(lo: int, hi: int, depth: int) -> _RbNode:
            if lo >= hi:
                return t.nil
            mid = (lo + hi) // 2
            e = items[mid]
            node = _RbNode(e.ckey, e.seg, e.weight, e.value)
            node.red = RED if depth == max_depth else BLACK
            node.left = rec(lo, mid, depth + 1)
            node.right = rec(mid + 1, hi, depth + 1)
            if node.left is not t.nil:
                node.left.parent = node
            if node.right is not t.nil:
                node.right.parent = node
            node.agg = node.left.agg + node.right.agg + node.weight
            return node

        t.root = rec(0, n, 1)
        t.root.parent = t.nil
        t.root.red = BLACK
        t.count = n
        return t

    # -- diagnostics --

    def validate(self) -> None:
        if self.root is self.nil:
            return
        assert self.root.red is BLACK, "root must be black"
        seen = []

        def rec(node) -> int:
            if node is self.nil:
                return 1
            if node.red is RED:
                assert node.left.red is BLACK and node.right.red is BLACK, "red node with red child"
            if node.left is not self.nil:
                assert node.left.ckey < node.ckey, "left child out of order"
            if node.right is not self.nil:
                assert node.right.ckey > node.ckey, "right child out of order"
            bl = rec(node.left)
            br = rec(node.right)
            assert bl == br, "black-height mismatch"
            assert node.agg == node.left.agg + node.right.agg + node.weight, "stale aggregate"
            seen.append(node)
            return bl + (0 if node.red is RED else 1)

        rec(self.root)
        assert len(seen) == self.count, "node count drift"

    def deep_group_spans(self, target_depth: int) -> list[tuple[int, int]]:
        """In-order index spans of subtrees rooted at target_depth that have
        children below (candidates for merging)."""
        spans: list[tuple[int, int]] = []
        idx = 0

        def rec(node, depth) -> tuple[int, int]:
            nonlocal idx
            if node is self.nil:
                return idx, idx
            l0, _ = rec(node.left, depth + 1)
            idx += 1
            _, r1 = rec(node.right, depth + 1)
            if depth == target_depth and (node.left is not self.nil or node.right is not self.nil):
                spans.append((l0, r1))
            return l0, r1

        rec(self.root, 1)
        return spans

    def memory_bytes(self) -> int:
        # key + value + weight + agg + 3 pointers + color, rounded up
        return self.count * 64


# ---------------------------------------------------------------------------
# B+ backend
# ---------------------------------------------------------------------------


class _BpLeaf:
    __slots__ = ("keys", "values", "weights", "segs", "agg", "next", "prev")

    def __init__(self):
        self.keys: list = []
        self.values: list = []
        self.weights: list = []
        self.segs: list = []
        self.agg = 0
        self.next: Optional[_BpLeaf] = None
        self.prev: Optional[_BpLeaf] = None

    def recompute(self) -> None:
        self.agg = sum(self.weights)


class _BpInner:
    __slots__ = ("keys", "children", "agg")

    def __init__(self):
        self.keys: list = []
        self.children: list = []
        self.agg = 0

    def recompute(self) -> None:
        self.agg = sum(c.agg for c in self.children)


def _bisect_right(keys, x) -> int:
    lo, hi = 0, len(keys)
    while lo < hi:
        mid = (lo + hi) // 2
        if x < keys[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _bisect_left(keys, x) -> int:
    lo, hi = 0, len(keys)
    while lo < hi:
        mid = (lo + hi) // 2
        if keys[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


class _BpBackend:
    kind = Backend.BPMAT

    def __init__(self, branching: int = DEFAULT_BRANCHING):
        self.branching = branching
        self.root = _BpLeaf()
        self.count = 0

    @property
    def max_keys(self) -> int:
        return self.branching - 1

    @property
    def min_keys(self) -> int:
        return math.ceil(self.branching / 2) - 1

    # -- queries --

    def _find_leaf(self, ckey) -> tuple[_BpLeaf, list[tuple[_BpInner, int]]]:
        path: list[tuple[_BpInner, int]] = []
        node = self.root
        while isinstance(node, _BpInner):
            ci = _bisect_right(node.keys, ckey)
            path.append((node, ci))
            node = node.children[ci]
        return node, path

    def find(self, ckey):
        leaf, path = self._find_leaf(ckey)
        i = _bisect_left(leaf.keys, ckey)
        if i < len(leaf.keys) and leaf.keys[i] == ckey:
            return leaf, i, path
        return None

    def descend(self, ckey):
        """Returns (bias, exact (leaf, idx) or None, owner_seg or None, visited)."""
        bias = 0
        visited = 0
        node = self.root
        while isinstance(node, _BpInner):
            visited += 1
            ci = _bisect_right(node.keys, ckey)
            for j in range(ci):
                bias += node.children[j].agg
            node = node.children[ci]
        visited += 1
        bl = _bisect_left(node.keys, ckey)
        for j in range(bl):
            bias += node.weights[j]
        exact = None
        if bl < len(node.keys) and node.keys[bl] == ckey:
            exact = (node, bl)
        oi = _bisect_right(node.keys, ckey) - 1
        owner_seg = None
        if oi >= 0:
            owner_seg = node.segs[oi]
        else:
            prev = node.prev
            while prev is not None and not prev.keys:
                prev = prev.prev
            if prev is not None:
                owner_seg = prev.segs[-1]
        return bias, exact, owner_seg, visited

    def entries(self) -> Iterator[Entry]:
        leaf = self._leftmost_leaf()
        while leaf is not None:
            for i in range(len(leaf.keys)):
                yield Entry(leaf.keys[i], leaf.values[i], leaf.weights[i], leaf.segs[i])
            leaf = leaf.next

    def _leftmost_leaf(self) -> _BpLeaf:
        node = self.root
        while isinstance(node, _BpInner):
            node = node.children[0]
        return node

    def height(self) -> int:
        if isinstance(self.root, _BpLeaf) and not self.root.keys:
            return 0
        h = 1
        node = self.root
        while isinstance(node, _BpInner):
            h += 1
            node = node.children[0]
        return h

    def iter_segs(self):
        leaf = self._leftmost_leaf()
        while leaf is not None:
            yield from leaf.segs
            leaf = leaf.next

    def stats_walk(self):
        height = self.height()
        gran = None
        max_alpha = 0.0
        models = 0
        segs = 0
        live = 0
        for seg in self.iter_segs():
            segs += 1
            lc = seg.live_count
            live += lc
            if lc > 0 and (gran is None or lc < gran):
                gran = lc
            if seg.alpha > max_alpha:
                max_alpha = seg.alpha
            if seg.model is not None:
                models += 1
        return height, gran, max_alpha, models, segs, live

    # -- mutation --

    def insert(self, ckey, seg, weight, value=None) -> None:
        leaf, path = self._find_leaf(ckey)
        i = _bisect_left(leaf.keys, ckey)
        leaf.keys.insert(i, ckey)
        leaf.values.insert(i, value)
        leaf.weights.insert(i, weight)
        leaf.segs.insert(i, seg)
        leaf.recompute()
        self.count += 1

        child = leaf
        sep = None
        new_child = None
        if len(leaf.keys) > self.max_keys:
            sep, new_child = self._split_leaf(leaf)
        for inner, ci in reversed(path):
            if new_child is not None:
                inner.keys.insert(ci, sep)
                inner.children.insert(ci + 1, new_child)
                sep, new_child = (None, None)
                if len(inner.keys) > self.max_keys:
                    sep, new_child = self._split_inner(inner)
            inner.recompute()
            child = inner
        if new_child is not None:
            root = _BpInner()
            root.keys = [sep]
            root.children = [child, new_child]
            root.recompute()
            self.root = root

    def _split_leaf(self, leaf: _BpLeaf):
        mid = len(leaf.keys) // 2
        right = _BpLeaf()
        right.keys = leaf.keys[mid:]
        right.values = leaf.values[mid:]
        right.weights = leaf.weights[mid:]
        right.segs = leaf.segs[mid:]
        leaf.keys = leaf.keys[:mid]
        leaf.values = leaf.values[:mid]
        leaf.weights = leaf.weights[:mid]
        leaf.segs = leaf.segs[:mid]
        right.next = leaf.next
        if right.next is not None:
            right.next.prev = right
        right.prev = leaf
        leaf.next = right
        leaf.recompute()
        right.recompute()
        return right.keys[0], right

    def _split_inner(self, inner: _BpInner):
        mid = len(inner.keys) // 2
        sep = inner.keys[mid]
        right = _BpInner()
        right.keys = inner.keys[mid + 1 :]
        right.children = inner.children[mid + 1 :]
        inner.keys = inner.keys[:mid]
        inner.children = inner.children[: mid + 1]
        inner.recompute()
        right.recompute()
        return sep, right

    def update_entry(self, leaf: _BpLeaf, i: int, path, value, weight_delta: int) -> None:
        leaf.values[i] = value
        leaf.weights[i] += weight_delta
        leaf.recompute()
        for inner, _ in reversed(path):
            inner.recompute()

    # -- bulk construction --

    @classmethod
    def build(cls, items: list[Entry], branching: int = DEFAULT_BRANCHING) -> "_BpBackend":
        t = cls(branching)
        n = len(items)
        if n == 0:
            return t
        target = max((t.max_keys + max(t.min_keys, 1)) // 2, 1)
        chunks = _balanced_chunks(n, target, t.min_keys, t.max_keys)

        leaves: list[_BpLeaf] = []
        pos = 0
        for size in chunks:
            leaf = _BpLeaf()
            for e in items[pos : pos + size]:
                leaf.keys.append(e.ckey)
                leaf.values.append(e.value)
                leaf.weights.append(e.weight)
                leaf.segs.append(e.seg)
            leaf.recompute()
            leaves.append(leaf)
            pos += size
        for a, b in zip(leaves, leaves[1:]):
            a.next = b
            b.prev = a

        level: list = leaves
        firsts = [lf.keys[0] for lf in leaves]
        while len(level) > 1:
            max_children = t.max_keys + 1
            min_children = max(t.min_keys + 1, 2)
            target_children = max((max_children + min_children) // 2, 2)
            sizes = _balanced_chunks(len(level), target_children, min_children, max_children)
            next_level = []
            next_firsts = []
            pos = 0
            for size in sizes:
                inner = _BpInner()
                inner.children = level[pos : pos + size]
                inner.keys = firsts[pos + 1 : pos + size]
                inner.recompute()
                next_level.append(inner)
                next_firsts.append(firsts[pos])
                pos += size
            level = next_level
            firsts = next_firsts
        t.root = level[0]
        t.count = n
        return t

    # -- diagnostics --

    def validate(self) -> None:
        if isinstance(self.root, _BpLeaf):
            assert sum(w for w in self.root.weights) == self.root.agg
            return
        depths = set()
        total = 0

        def rec(node, depth, lo, hi):
            nonlocal total
            if isinstance(node, _BpLeaf):
                depths.add(depth)
                assert len(node.keys) <= self.max_keys
                if node is not self.root:
                    assert len(node.keys) >= self.min_keys, "leaf underflow"
                for i, k in enumerate(node.keys):
                    assert (lo is None or k >= lo) and (hi is None or k < hi), "leaf key out of range"
                    if i:
                        assert node.keys[i - 1] < k, "leaf keys unsorted"
                assert node.agg == sum(node.weights), "stale leaf aggregate"
                total += len(node.keys)
                return node.agg
            assert len(node.keys) <= self.max_keys
            if node is not self.root:
                assert len(node.keys) >= self.min_keys, "inner underflow"
            assert len(node.children) == len(node.keys) + 1
            agg = 0
            bounds = [lo] + list(node.keys) + [hi]
            for i, child in enumerate(node.children):
                agg += rec(child, depth + 1, bounds[i], bounds[i + 1])
            assert node.agg == agg, "stale inner aggregate"
            return agg

        rec(self.root, 1, None, None)
        assert len(depths) == 1, "leaves not equidepth"
        assert total == self.count, "entry count drift"

    def deep_group_spans(self, target_depth: int) -> list[tuple[int, int]]:
        if isinstance(self.root, _BpLeaf):
            return []
        spans: list[tuple[int, int]] = []
        idx = 0

        def walk(node, depth):
            nonlocal idx
            if isinstance(node, _BpLeaf):
                idx += len(node.keys)
                return
            start = idx
            for child in node.children:
                walk(child, depth + 1)
            if depth == target_depth:
                spans.append((start, idx))

        walk(self.root, 1)
        return spans

    def memory_bytes(self) -> int:
        total = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, _BpLeaf):
                total += 32 + 32 * len(node.keys)
            else:
                total += 32 + 8 * len(node.keys) + 8 * len(node.children)
                stack.extend(node.children)
        return total


def _balanced_chunks(n: int, target: int, lo: int, hi: int) -> list[int]:
    """Chunk sizes summing to n, each within [lo, hi] when n allows it."""
    if n <= hi:
        return [n]
    parts = max(math.ceil(n / target), 2)
    while math.ceil(n / parts) > hi:
        parts += 1
    base = n // parts
    extra = n % parts
    sizes = [base + (1 if i < extra else 0) for i in range(parts)]
    if lo > 0 and sizes[-1] < lo:
        # redistribute from the first chunks, which sit at base+1
        need = lo - sizes[-1]
        for i in range(parts - 1):
            give = min(sizes[i] - lo, need)
            if give > 0:
                sizes[i] -= give
                sizes[-1] += give
                need -= give
            if need == 0:
                break
    return sizes


# ---------------------------------------------------------------------------
# Facade
# ---------------------------------------------------------------------------


class Bmat:
    """Delta-buffer tree over segment boundaries with one base segment."""

    def __init__(self, backend: Backend, base_segment: GappedSegment, branching: int = DEFAULT_BRANCHING):
        self.backend = backend
        self.base_segment = base_segment
        self.branching = branching
        if backend is Backend.RBMAT:
            self._impl = _RbBackend()
        else:
            self._impl = _BpBackend(branching)

    # -- introspection --

    @property
    def node_count(self) -> int:
        return self._impl.count

    @property
    def height(self) -> int:
        return self._impl.height()

    def entries(self) -> Iterator[Entry]:
        if self.backend is Backend.RBMAT:
            for node in self._impl.entries():
                yield Entry(node.ckey, node.value, node.weight, node.seg)
        else:
            yield from self._impl.entries()

    def segments(self) -> Iterator[GappedSegment]:
        yield self.base_segment
        yield from self._impl.iter_segs()

    def validate(self) -> None:
        self._impl.validate()

    # -- core operations --

    def lookup_adjustment(self, key: int) -> Adjustment:
        ckey = (int(key), 0)
        if self.backend is Backend.RBMAT:
            bias, node, owner, visited = self._impl.descend(ckey)
            seg = owner.seg if owner is not None else self.base_segment
            hit = node.value if node is not None else None
        else:
            bias, exact, owner_seg, visited = self._impl.descend(ckey)
            seg = owner_seg if owner_seg is not None else self.base_segment
            hit = exact[0].values[exact[1]] if exact is not None else None
        return Adjustment(bias=bias, hit=hit, segment=seg, nodes_visited=visited)

    def insert_update(
        self,
        key: int,
        value,
        K: int,
        d: DensityModel,
        d_max: int,
        shift_window: int = 8,
    ) -> UpdateOutcome:
        if K < 1:
            raise ValueError("K must be >= 1")
        key = int(key)
        ckey = (key, 0)
        node_ref, owner = self._descend_full(ckey)

        if node_ref is not None:
            # Keep node buffers and segment slots disjoint: overwrite the
            # live slot when one exists, otherwise buffer in the node.
            slot = owner.find_exact(key)
            if slot is not None:
                owner.set_value(slot, value)
            else:
                creates = self._node_value(node_ref) is None
                self._set_node_value(node_ref, value, +1 if creates else 0)
            return UpdateOutcome.UPDATED_NODE

        pred, succ, exact = owner.locate(key)
        if exact is not None:
            owner.set_value(exact, value)
            return UpdateOutcome.UPDATED_NODE

        placed = place_between(owner, key, value, pred, succ, shift_window)
        if placed is not None:
            return UpdateOutcome.IN_GAP

        self._split_segment(owner, key, value, K, d, d_max)
        return UpdateOutcome.SEGMENT_SPLIT

    def delete_update(self, key: int) -> DeleteOutcome:
        key = int(key)
        node_ref, owner = self._descend_full((key, 0))
        slot = owner.find_exact(key)
        had_node_value = node_ref is not None and self._node_value(node_ref) is not None
        if not had_node_value and slot is None:
            return DeleteOutcome.NOT_FOUND
        if had_node_value:
            self._set_node_value(node_ref, None, 0)
        if slot is not None:
            owner.nullify_slot(slot)
        ledger = node_ref if node_ref is not None else self._find_node((key, 1))
        if ledger is not None:
            self._apply_weight_delta(ledger, -1)
        return DeleteOutcome.REMOVED if slot is not None else DeleteOutcome.TOMBSTONED

    def convert(self, target: Backend) -> "Bmat":
        if target is self.backend:
            raise ValueError("no-op conversion")
        items = list(self.entries())
        out = Bmat.__new__(Bmat)
        out.backend = target
        out.base_segment = self.base_segment
        out.branching = self.branching
        if target is Backend.RBMAT:
            out._impl = _RbBackend.build(items)
        else:
            out._impl = _BpBackend.build(items, self.branching)
        return out

    def prune_retrain(self, trainer: Callable, cfg: ModelConfig) -> "Bmat":
        h = self.height
        if h < 2:
            raise ValueError("nothing to prune")
        spans = self._impl.deep_group_spans(h - 1)
        items = list(self.entries())
        merged: list[Entry] = []
        pos = 0
        for start, stop in sorted(spans):
            merged.extend(items[pos:start])
            merged.append(self._merge_group(items[start:stop], trainer, cfg))
            pos = stop
        merged.extend(items[pos:])

        out = Bmat.__new__(Bmat)
        out.backend = self.backend
        out.base_segment = self.base_segment
        out.branching = self.branching
        if self.backend is Backend.RBMAT:
            out._impl = _RbBackend.build(merged)
        else:
            out._impl = _BpBackend.build(merged, self.branching)
        return out

    def stats(self) -> PerfMeasures:
        height, gran, max_alpha, models, segs, live = self._impl.stats_walk()
        base = self.base_segment
        if base.live_count > 0 and (gran is None or base.live_count < gran):
            gran = base.live_count
        if base.alpha > max_alpha:
            max_alpha = base.alpha
        if base.model is not None:
            models += 1
        return PerfMeasures(
            height=height,
            granularity=gran if gran is not None else 0,
            error_scaling=max_alpha,
            model_count=models,
            node_count=self.node_count,
            segment_count=segs + 1,
            live_keys=live + base.live_count,
        )

    def memory_bytes(self) -> int:
        return self._impl.memory_bytes()

    # -- backend shims --

    def _find_node(self, ckey):
        found = self._impl.find(ckey)
        return found

    def _node_value(self, ref):
        if self.backend is Backend.RBMAT:
            return ref.value
        leaf, i, _ = ref
        return leaf.values[i]

    def _set_node_value(self, ref, value, weight_delta: int) -> None:
        if self.backend is Backend.RBMAT:
            ref.value = value
            if weight_delta:
                self._impl.weight_delta(ref, weight_delta)
        else:
            leaf, i, path = ref
            self._impl.update_entry(leaf, i, path, value, weight_delta)

    def _apply_weight_delta(self, ref, delta: int) -> None:
        if self.backend is Backend.RBMAT:
            self._impl.weight_delta(ref, delta)
        else:
            leaf, i, path = ref
            self._impl.update_entry(leaf, i, path, leaf.values[i], delta)

    def _descend_full(self, ckey):
        """One descent resolving both the exact-node ref and the owner segment."""
        if self.backend is Backend.RBMAT:
            _, node, owner, _ = self._impl.descend(ckey)
            if node is not None:
                return node, node.seg
            return None, owner.seg if owner is not None else self.base_segment
        _, exact, owner_seg, _ = self._impl.descend(ckey)
        if exact is not None:
            # mutations need the root-to-leaf path, so re-resolve via find
            return self._impl.find(ckey), exact[0].segs[exact[1]]
        return None, owner_seg if owner_seg is not None else self.base_segment

    # -- split mechanics --

    def _split_segment(self, seg: GappedSegment, key: int, value, K: int, d: DensityModel, d_max: int) -> None:
        pred, succ, _ = seg.bisect_live(key)
        old_live = seg.live_count

        if succ is None:
            mid_pairs = [(key, value)]
            aux = key
            cut = len(seg.keys)
            right_start = None
        else:
            # first K live slots at or after the collision point
            span = 4 * K + 64
            total = len(seg.keys)
            live_rel = np.flatnonzero(seg.occ[succ : succ + span])
            while live_rel.size < K and succ + span < total:
                span *= 4
                live_rel = np.flatnonzero(seg.occ[succ : succ + span])
            slots = succ + live_rel[:K]
            aux_slot = int(slots[-1])
            aux = int(seg.keys[aux_slot])
            mid_keys = seg.keys[slots].tolist()
            mid_pairs = [(key, value)] + [(k, seg.vals[s]) for k, s in zip(mid_keys, slots.tolist())]
            cut = succ
            right_start = aux_slot + 1

        mid = expand_segment(mid_pairs, d, d_max)
        mid.key_range = (key, aux)
        self._fit_child_locator(seg, mid)

        right_seg = None
        if right_start is not None and right_start < len(seg.keys):
            right_seg = GappedSegment(
                keys=seg.keys[right_start:],
                occ=seg.occ[right_start:],
                vals=seg.vals[right_start:],
                gamma=None,
                alpha=seg.alpha,
                live_count=int(np.count_nonzero(seg.occ[right_start:])),
                key_range=(aux + 1, seg.key_range[1]),
            )
            right_seg.set_locator(seg.model, seg.scale, seg.offset - right_start, seg.model_err, seg.slack)

        mid_from_parent = len(mid_pairs) - 1
        right_live = right_seg.live_count if right_seg is not None else 0

        seg.keys = seg.keys[:cut]
        seg.occ = seg.occ[:cut]
        seg.vals = seg.vals[:cut]
        seg.live_count = old_live - mid_from_parent - right_live
        seg.null_count = cut - seg.live_count
        seg.key_range = (seg.key_range[0], key - 1 if key > 0 else 0)
        seg.gamma = None

        self._impl.insert((key, 0), mid, weight=1, value=None)
        if right_seg is not None:
            self._impl.insert((aux, 1), right_seg, weight=0, value=None)

    @staticmethod
    def _fit_child_locator(parent: GappedSegment, child: GappedSegment) -> None:
        """Linear re-fit of the parent model onto the child's fresh layout.

        The residual of the fit is measured exactly over the child's keys so
        the search window stays certified without retraining.
        """
        if parent.model is None:
            return
        if child.live_count == 1:
            slot = int(np.argmax(child.occ))
            child.set_locator(parent.model, 0.0, float(slot), 0.0, 1)
            return
        positions = np.flatnonzero(child.occ).astype(np.float64)
        keys = child.keys[child.occ].astype(np.float64)
        preds = parent.model.predict_many(keys)
        p0, pn = float(preds[0]), float(preds[-1])
        s0, sn = float(positions[0]), float(positions[-1])
        scale = (sn - s0) / (pn - p0) if pn > p0 else 0.0
        offset = s0 - scale * p0
        err = float(np.max(np.abs(scale * preds + offset - positions)))
        slack = int(child.gamma.max()) + 1 if child.gamma is not None and child.gamma.size else 1
        child.set_locator(parent.model, scale, offset, err, slack)

    def _merge_group(self, group: list[Entry], trainer: Callable, cfg: ModelConfig) -> Entry:
        """Collapse a run of entries into one node backed by one retrained
        segment holding every live pair of the group."""
        keys: list[int] = []
        values: list[object] = []
        for e in group:
            for k, v in e.seg.live_pairs():
                keys.append(k)
                values.append(v)
        # Buffered node values shadow any stale segment entry at the same key.
        karr = np.asarray(keys, dtype=np.uint64)
        for e in group:
            if e.value is None:
                continue
            k = e.ckey[0]
            i = int(np.searchsorted(karr, k))
            if i < karr.size and int(karr[i]) == k:
                values[i] = e.value
            else:
                karr = np.insert(karr, i, k)
                values.insert(i, e.value)

        first = group[0]
        lo = first.ckey[0] + first.ckey[1]  # flag 1 starts just above its key
        hi = max(e.seg.key_range[1] for e in group)
        n = int(karr.size)
        total_weight = sum(e.weight for e in group)

        vals = np.empty(n, dtype=object)
        for i, v in enumerate(values):
            vals[i] = v
        merged = GappedSegment(
            keys=karr.astype(np.uint64),
            occ=np.ones(n, dtype=bool),
            vals=vals,
            gamma=np.zeros(n, dtype=np.int64) if n else None,
            alpha=0.0,
            live_count=n,
            key_range=(lo, hi),
        )
        if n:
            m = trainer(karr, cfg)
            merged.set_locator(m, 1.0, 0.0, float(m.error_bound), 1)
        return Entry(first.ckey, None, total_weight, merged)
