"""Rooted class trees with the leaf-first indexing convention.

Nodes are integers. The root is ``0``, the ``K`` leaves (fine-grained classes)
are ``1..K`` and internal superclass nodes follow as ``K+1..n-1``, ordered by
increasing height so that iterating them in id order always visits children
before parents.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:
    from .weighting import WeightedHierarchy

__all__ = [
    "Hierarchy",
    "HierarchyError",
    "PrunedPartition",
    "parse_hierarchy",
    "from_edges",
    "load_hierarchy",
    "serialize_hierarchy",
    "flat_hierarchy",
    "seven_leaf_hierarchy",
    "random_hierarchy",
    "enumerate_shapes",
    "ancestors",
    "lca",
    "height",
    "depth",
    "prune",
    "threshold_grid",
]

# above this many nodes, LCA queries switch to binary lifting
_LIFTING_THRESHOLD = 100_000


class HierarchyError(ValueError):
    """Raised for malformed tree documents and invalid node queries."""


class Hierarchy:
    """Immutable rooted tree over ``K`` leaf classes.

    Parameters
    ----------
    parent : sequence of int
        ``parent[j]`` is the parent of node ``j``; ``parent[0]`` must be -1.
        Ids must already follow the convention (root 0, leaves ``1..K``).
    names : sequence of str, optional
        Human-readable node names; empty strings allowed.
    original_ids : sequence of str, optional
        Ids as they appeared in the source document.
    """

    def __init__(
        self,
        parent: Sequence[int],
        names: Sequence[str] | None = None,
        original_ids: Sequence[str] | None = None,
    ):
        parent = np.asarray(parent, dtype=np.int64)
        n = parent.shape[0]
        if n < 2:
            raise HierarchyError("a hierarchy needs a root and at least one leaf")
        if parent[0] != -1:
            raise HierarchyError("node 0 must be the root (parent -1)")
        if np.any(parent[1:] < 0) or np.any(parent[1:] >= n):
            raise HierarchyError("every non-root node needs a parent in 0..n-1")

        children: list[list[int]] = [[] for _ in range(n)]
        for j in range(1, n):
            if parent[j] == j:
                raise HierarchyError(f"cycle detected: node {j} is its own parent")
            children[parent[j]].append(j)

        # BFS from the root: reaching every node proves connectivity and acyclicity
        depth = np.full(n, -1, dtype=np.int64)
        depth[0] = 0
        order = [0]
        queue = deque([0])
        while queue:
            j = queue.popleft()
            for c in children[j]:
                depth[c] = depth[j] + 1
                order.append(c)
                queue.append(c)
        if len(order) != n:
            raise HierarchyError("cycle detected: some nodes are unreachable from the root")

        leaves = [j for j in range(1, n) if not children[j]]
        k = len(leaves)
        if leaves != list(range(1, k + 1)):
            raise HierarchyError("leaves must be exactly the ids 1..K")
        if not children[0]:
            raise HierarchyError("the root has no children")

        height = np.zeros(n, dtype=np.int64)
        for j in reversed(order):
            if children[j]:
                height[j] = 1 + max(height[c] for c in children[j])

        self._parent = parent
        self._children = tuple(tuple(c) for c in children)
        self._depth = depth
        self._height = height
        self._k = k
        self._names = tuple(names) if names is not None else ("",) * n
        self._original_ids = (
            tuple(str(o) for o in original_ids) if original_ids is not None
            else tuple(str(j) for j in range(n))
        )
        if len(self._names) != n or len(self._original_ids) != n:
            raise HierarchyError("names/original_ids length does not match node count")
        for arr in (self._parent, self._depth, self._height):
            arr.setflags(write=False)

    # -- basic structure --------------------------------------------------

    @property
    def node_count(self) -> int:
        return self._parent.shape[0]

    @property
    def n_leaves(self) -> int:
        return self._k

    K = n_leaves

    @property
    def parent(self) -> np.ndarray:
        return self._parent

    @property
    def children(self) -> tuple[tuple[int, ...], ...]:
        return self._children

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def original_ids(self) -> tuple[str, ...]:
        return self._original_ids

    @property
    def heights(self) -> np.ndarray:
        return self._height

    @property
    def depths(self) -> np.ndarray:
        return self._depth

    @property
    def leaves(self) -> range:
        return range(1, self._k + 1)

    def is_leaf(self, j: int) -> bool:
        return 1 <= j <= self._k

    def _check(self, j: int) -> int:
        if not isinstance(j, (int, np.integer)) or not 0 <= j < self.node_count:
            raise HierarchyError(f"unknown node id {j!r}")
        return int(j)

    def check_leaf(self, j: int) -> int:
        j = self._check(j)
        if not self.is_leaf(j):
            raise HierarchyError(f"node {j} is not a leaf")
        return j

    # -- queries ----------------------------------------------------------

    def ancestors(self, j: int) -> list[int]:
        """Path from ``j`` up to, but excluding, the root."""
        j = self._check(j)
        if j == 0:
            raise HierarchyError("the root has no ancestor set")
        path = []
        while j != 0:
            path.append(j)
            j = int(self._parent[j])
        return path

    def height(self, j: int) -> int:
        return int(self._height[self._check(j)])

    def depth(self, j: int) -> int:
        return int(self._depth[self._check(j)])

    def lca(self, a: int, b: int) -> int:
        a, b = self._check(a), self._check(b)
        if self.node_count > _LIFTING_THRESHOLD:
            return self._lca_lifting(a, b)
        depth, parent = self._depth, self._parent
        while depth[a] > depth[b]:
            a = int(parent[a])
        while depth[b] > depth[a]:
            b = int(parent[b])
        while a != b:
            a, b = int(parent[a]), int(parent[b])
        return a

    @cached_property
    def _lifting_table(self) -> np.ndarray:
        levels = max(1, int(self._depth.max()).bit_length())
        up = np.empty((levels, self.node_count), dtype=np.int64)
        up[0] = np.where(self._parent < 0, 0, self._parent)
        for i in range(1, levels):
            up[i] = up[i - 1][up[i - 1]]
        return up

    def _lca_lifting(self, a: int, b: int) -> int:
        up = self._lifting_table
        if self._depth[a] < self._depth[b]:
            a, b = b, a
        diff = int(self._depth[a] - self._depth[b])
        i = 0
        while diff:
            if diff & 1:
                a = int(up[i, a])
            diff >>= 1
            i += 1
        if a == b:
            return a
        for i in range(up.shape[0] - 1, -1, -1):
            if up[i, a] != up[i, b]:
                a, b = int(up[i, a]), int(up[i, b])
        return int(up[0, a])

    # -- derived tables ---------------------------------------------------

    @cached_property
    def bottom_up(self) -> np.ndarray:
        """Internal nodes (root last) ordered so that children precede parents."""
        internal = np.arange(self._k + 1, self.node_count)
        internal = internal[np.argsort(self._height[internal], kind="stable")]
        return np.append(internal, 0)

    @cached_property
    def membership(self) -> np.ndarray:
        """Boolean ``(n, K)`` matrix; row ``j`` marks the leaves subsumed by node ``j``.

        This is the sparse aggregation layer mapping class probabilities to
        superclass probabilities.
        """
        m = np.zeros((self.node_count, self._k), dtype=bool)
        m[np.arange(1, self._k + 1), np.arange(self._k)] = True
        for j in self.bottom_up:
            for c in self._children[j]:
                m[j] |= m[c]
        m.setflags(write=False)
        return m

    def leaf_set(self, j: int) -> frozenset[int]:
        j = self._check(j)
        return frozenset(int(i) + 1 for i in np.flatnonzero(self.membership[j]))

    @cached_property
    def path_matrix(self) -> np.ndarray:
        """``(K+1, D)`` ancestors of each leaf, one column per depth, root-padded.

        Row ``k`` lists ``a(k)`` ordered root-to-leaf (depth 1 first); rows are
        padded with 0 past the leaf's depth. Row 0 is all zeros.
        """
        d = int(self._depth[1: self._k + 1].max())
        out = np.zeros((self._k + 1, d), dtype=np.int64)
        for k in self.leaves:
            path = self.ancestors(k)[::-1]
            out[k, : len(path)] = path
        out.setflags(write=False)
        return out

    @cached_property
    def leaf_lca(self) -> np.ndarray:
        """``(K, K)`` matrix of lowest common ancestors of leaf pairs (0-based rows)."""
        out = np.zeros((self._k, self._k), dtype=np.int64)
        for j in np.argsort(self._depth, kind="stable"):
            if j == 0:
                continue
            idx = np.flatnonzero(self.membership[j])
            out[np.ix_(idx, idx)] = j
        out.setflags(write=False)
        return out

    # -- misc -------------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Hierarchy):
            return NotImplemented
        return np.array_equal(self._parent, other._parent) and self._names == other._names

    def __hash__(self) -> int:
        return hash((self._parent.tobytes(), self._names))

    def __repr__(self) -> str:
        return f"Hierarchy(K={self._k}, nodes={self.node_count}, height={self.height(0)})"


# Module-level query functions mirror the methods.

def ancestors(h: Hierarchy, j: int) -> list[int]:
    return h.ancestors(j)


def lca(h: Hierarchy, a: int, b: int) -> int:
    return h.lca(a, b)


def height(h: Hierarchy, j: int) -> int:
    return h.height(j)


def depth(h: Hierarchy, j: int) -> int:
    return h.depth(j)


# -- construction from arbitrary ids --------------------------------------

def from_edges(
    nodes: Iterable[tuple[Any, Any]],
    names: Mapping[Any, str] | None = None,
    declared_leaves: Iterable[Any] = (),
) -> Hierarchy:
    """Build a normalized hierarchy from ``(id, parent_id)`` pairs.

    The root is the single node whose parent is ``None``. Leaves keep their
    order of appearance; internal nodes are numbered by increasing height,
    ties broken by order of appearance.
    """
    order: list[Any] = []
    parent_of: dict[Any, Any] = {}
    for node, par in nodes:
        if node in parent_of:
            raise HierarchyError(f"duplicate id {node!r}")
        parent_of[node] = par
        order.append(node)

    roots = [n for n in order if parent_of[n] is None]
    if not roots:
        raise HierarchyError("no root found (every node has a parent): cycle detected")
    if len(roots) > 1:
        raise HierarchyError(f"multiple roots: {roots!r}")
    for node in order:
        par = parent_of[node]
        if par is not None and par not in parent_of:
            raise HierarchyError(f"orphan node {node!r}: parent {par!r} is not declared")
        if par == node:
            raise HierarchyError(f"cycle detected: {node!r} is its own parent")

    children: dict[Any, list[Any]] = {n: [] for n in order}
    for node in order:
        if parent_of[node] is not None:
            children[parent_of[node]].append(node)
    for leaf in declared_leaves:
        if children.get(leaf):
            raise HierarchyError(f"leaf {leaf!r} declared with children")

    # detect cycles not reachable from the root
    seen = {roots[0]}
    queue = deque([roots[0]])
    while queue:
        for c in children[queue.popleft()]:
            seen.add(c)
            queue.append(c)
    if len(seen) != len(order):
        stuck = [n for n in order if n not in seen]
        raise HierarchyError(f"cycle detected among nodes {stuck[:5]!r}")

    hgt: dict[Any, int] = {}

    def _height(n: Any) -> int:
        stack = [n]
        while stack:
            top = stack[-1]
            pending = [c for c in children[top] if c not in hgt]
            if pending:
                stack.extend(pending)
                continue
            stack.pop()
            hgt[top] = 1 + max((hgt[c] for c in children[top]), default=-1)
        return hgt[n]

    _height(roots[0])
    root = roots[0]
    if not children[root]:
        raise HierarchyError("the root has no children")
    leaf_ids = [n for n in order if n != root and not children[n]]
    internal = [n for n in order if n != root and children[n]]
    pos = {n: i for i, n in enumerate(order)}
    internal.sort(key=lambda n: (hgt[n], pos[n]))
    new_order = [root] + leaf_ids + internal
    index = {n: i for i, n in enumerate(new_order)}
    parent = [-1] + [index[parent_of[n]] for n in new_order[1:]]
    names = names or {}
    return Hierarchy(
        parent,
        names=[str(names.get(n, "") or "") for n in new_order],
        original_ids=[str(n) for n in new_order],
    )


def parse_hierarchy(text: str) -> Hierarchy:
    """Parse a tree document.

    Two forms are accepted. A JSON object ``{"nodes": [{"id", "parent",
    "name"?, "leaf"?}, ...]}`` whose root has a null or absent parent, or a
    tab-separated ``child<TAB>parent[<TAB>name]`` edge list where ``#`` starts
    a comment and the root is the one parent that never appears as a child.
    """
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise HierarchyError(f"invalid JSON tree document: {exc}") from exc
        return _from_document(doc)
    return _from_edge_list(text)


def _from_document(doc: Any) -> Hierarchy:
    if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list):
        raise HierarchyError("tree document must be an object with a 'nodes' list")
    pairs, names, leaves = [], {}, []
    for i, entry in enumerate(doc["nodes"]):
        if not isinstance(entry, dict) or "id" not in entry:
            raise HierarchyError(f"node entry {i} lacks an 'id'")
        # serialized documents carry normalized ids; original ids take precedence
        node = entry.get("original_id", entry["id"])
        pairs.append((node, entry.get("parent")))
        names[node] = entry.get("name", "")
        if entry.get("leaf"):
            leaves.append(node)
    if any("original_id" in e for e in doc["nodes"]):
        remap = {e["id"]: e.get("original_id", e["id"]) for e in doc["nodes"]}
        pairs = [(n, None if p is None else remap.get(p, p)) for n, p in pairs]
    return from_edges(pairs, names, leaves)


def _from_edge_list(text: str) -> Hierarchy:
    pairs: list[tuple[str, str]] = []
    names: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        cols = [c.strip() for c in line.split("\t")]
        if len(cols) < 2 or not cols[0] or not cols[1]:
            raise HierarchyError(f"line {lineno}: expected 'child<TAB>parent'")
        pairs.append((cols[0], cols[1]))
        if len(cols) > 2:
            names[cols[0]] = cols[2]
    if not pairs:
        raise HierarchyError("empty edge list")
    children = {c for c, _ in pairs}
    roots = list(dict.fromkeys(p for _, p in pairs if p not in children))
    if len(roots) > 1:
        raise HierarchyError(f"multiple roots: {roots!r}")
    if not roots:
        raise HierarchyError("no root found: cycle detected")
    return from_edges([(roots[0], None)] + pairs, names)


def load_hierarchy(path: str) -> Hierarchy:
    with open(path, encoding="utf-8") as fh:
        return parse_hierarchy(fh.read())


def serialize_hierarchy(h: Hierarchy) -> str:
    """JSON document with normalized ids and an ``original_id`` field."""
    nodes = []
    for j in range(h.node_count):
        entry: dict[str, Any] = {
            "id": j,
            "parent": None if j == 0 else int(h.parent[j]),
            "original_id": h.original_ids[j],
        }
        if h.names[j]:
            entry["name"] = h.names[j]
        nodes.append(entry)
    return json.dumps({"nodes": nodes}, indent=1) + "\n"


# -- stock trees ------------------------------------------------------------

def flat_hierarchy(k: int) -> Hierarchy:
    """Root with ``k`` leaf children."""
    return Hierarchy([-1] + [0] * k)


def seven_leaf_hierarchy() -> Hierarchy:
    """Seven classes under three superclasses.

    ``8 = {2,3,4}``, ``9 = {6,7}``, ``10 = {5,9}``; leaf 1, node 8 and node
    10 hang from the root.
    """
    parent = [-1, 0, 8, 8, 8, 10, 9, 9, 0, 10, 0]
    return Hierarchy(parent)


def random_hierarchy(rng: np.random.Generator, max_nodes: int = 50) -> Hierarchy:
    """Random tree with 2..max_nodes nodes; single-child chains can occur."""
    n = int(rng.integers(2, max_nodes + 1))
    parents = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    return from_edges([(i, None if p < 0 else p) for i, p in enumerate(parents)])


def enumerate_shapes(max_nodes: int, max_leaves: int | None = None) -> list[Hierarchy]:
    """All non-isomorphic rooted trees with 2..max_nodes nodes."""

    def shapes(n: int) -> list[tuple]:
        # canonical form: sorted tuple of child shapes
        if n == 1:
            return [()]
        out = set()
        for parts in _partitions(n - 1):
            for combo in _product_sorted([shapes(p) for p in parts]):
                out.add(tuple(sorted(combo)))
        return sorted(out)

    result = []
    for n in range(2, max_nodes + 1):
        for shape in shapes(n):
            h = _shape_to_hierarchy(shape)
            if max_leaves is None or h.n_leaves <= max_leaves:
                result.append(h)
    return result


def _partitions(n: int, largest: int | None = None) -> list[list[int]]:
    largest = n if largest is None else largest
    if n == 0:
        return [[]]
    out = []
    for first in range(min(n, largest), 0, -1):
        for rest in _partitions(n - first, first):
            out.append([first] + rest)
    return out


def _product_sorted(options: list[list[tuple]]) -> list[tuple]:
    combos: list[tuple] = [()]
    for opts in options:
        combos = [c + (o,) for c in combos for o in opts]
    return combos


def _shape_to_hierarchy(shape: tuple) -> Hierarchy:
    pairs: list[tuple[int, int | None]] = []
    counter = [0]

    def walk(s: tuple, par: int | None) -> None:
        me = counter[0]
        counter[0] += 1
        pairs.append((me, par))
        for child in s:
            walk(child, me)

    walk(shape, None)
    return from_edges(pairs)


# -- threshold pruning ------------------------------------------------------

@dataclass(frozen=True)
class PrunedPartition:
    """Groups of leaves induced by cutting the tree at a cumulative-weight threshold."""

    threshold: float
    groups: tuple[tuple[int, frozenset[int]], ...]

    @property
    def supernodes(self) -> list[int]:
        return [node for node, _ in self.groups]

    def group_of(self) -> dict[int, int]:
        """Map each leaf to the index of its group."""
        return {leaf: g for g, (_, members) in enumerate(self.groups) for leaf in members}


# cumulative sums closer than this are treated as equal when cutting
PRUNE_TOL = 1e-12


def prune(wh: WeightedHierarchy, tau: float, tol: float = PRUNE_TOL) -> PrunedPartition:
    """Cut the weighted tree at threshold ``tau`` in ``(0, 1/2]``.

    A node ``l`` is kept as a supernode when the cumulative ancestor weight
    of its parent is below ``tau`` and its own is at least ``tau``. Sums are
    compared with an absolute tolerance ``tol`` so that a leaf whose path sums
    to 1/2 up to rounding is still selected at ``tau = 1/2``.
    """
    if not (0.0 < tau <= 0.5):
        raise HierarchyError(f"threshold must lie in (0, 1/2], got {tau!r}")
    if wh.violations(1e-9):
        raise HierarchyError("pruning requires a balanced weighting")
    h = wh.tree
    cum = wh.cumulative
    cum_parent = np.where(h.parent >= 0, cum[np.maximum(h.parent, 0)], -np.inf)
    keep = (cum_parent + tol < tau) & (tau <= cum + tol)
    keep[0] = False
    groups = []
    for j in np.flatnonzero(keep):
        groups.append((int(j), h.leaf_set(int(j))))
    groups.sort(key=lambda g: min(g[1]))
    return PrunedPartition(float(tau), tuple(groups))


def threshold_grid(wh: WeightedHierarchy, tol: float = PRUNE_TOL) -> list[float]:
    """Thresholds at which the pruned partition changes, plus 1/2, ascending."""
    cum = np.sort(wh.cumulative[1:])
    grid: list[float] = []
    for c in cum:
        if c <= tol or c > 0.5 + tol:
            continue
        c = min(float(c), 0.5)
        if not grid or c - grid[-1] > tol:
            grid.append(c)
        elif math.isclose(c, 0.5, abs_tol=tol):
            grid[-1] = 0.5
    if not grid or grid[-1] != 0.5:
        grid.append(0.5)
    return grid
