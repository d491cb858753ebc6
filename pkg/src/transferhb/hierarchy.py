"""Class hierarchies and the flat parameter layout shared by the optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class HierarchyError(ValueError):
    """Raised when a set of nodes and edges does not form a rooted tree."""


@dataclass(frozen=True)
class Hierarchy:
    """A rooted tree of named classes.

    Nodes are identified by their position in ``names``. ``parents[i]`` is the
    index of the parent of node ``i`` or ``None`` for the root.
    """

    names: tuple[str, ...]
    parents: tuple[int | None, ...]
    root: int
    children: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._lookup[name]
        except KeyError:
            raise KeyError(f"unknown node {name!r}") from None

    @property
    def _lookup(self) -> dict[str, int]:
        # frozen dataclass, so cache on the instance dict directly
        cache = self.__dict__.get("_lookup_cache")
        if cache is None:
            cache = {n: i for i, n in enumerate(self.names)}
            object.__setattr__(self, "_lookup_cache", cache)
        return cache

    def parent(self, node: int) -> int | None:
        return self.parents[node]

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]

    @property
    def edges(self) -> list[tuple[int, int]]:
        """(child, parent) pairs in node order."""
        return [(c, p) for c, p in enumerate(self.parents) if p is not None]

    def depth(self, node: int) -> int:
        d = 0
        while self.parents[node] is not None:
            node = self.parents[node]
            d += 1
        return d

    def descendant_leaves(self, node: int) -> list[int]:
        out = []
        stack = [node]
        while stack:
            n = stack.pop()
            if self.is_leaf(n):
                out.append(n)
            else:
                stack.extend(reversed(self.children[n]))
        return sorted(out)

    def topological(self) -> list[int]:
        """Nodes ordered so every parent precedes its children (breadth first)."""
        order = [self.root]
        for n in order:
            order.extend(self.children[n])
        return order

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.names),
            "edges": [[self.names[c], self.names[p]] for c, p in self.edges],
        }


def build_hierarchy(edges: Iterable[Sequence[str]], names: Sequence[str]) -> Hierarchy:
    """Validate ``(child, parent)`` edges over ``names`` and build a tree."""
    names = tuple(names)
    if not names:
        raise HierarchyError("hierarchy needs at least one node")
    lookup: dict[str, int] = {}
    for i, n in enumerate(names):
        if not isinstance(n, str) or not n:
            raise HierarchyError(f"node names must be non-empty strings, got {n!r}")
        if n in lookup:
            raise HierarchyError(f"duplicate node name {n!r}")
        lookup[n] = i

    parents: list[int | None] = [None] * len(names)
    for edge in edges:
        if len(edge) != 2:
            raise HierarchyError(f"edge must be (child, parent), got {edge!r}")
        child, par = edge
        for n in (child, par):
            if n not in lookup:
                raise HierarchyError(f"edge references unknown name {n!r}")
        c, p = lookup[child], lookup[par]
        if c == p:
            raise HierarchyError(f"cycle: {child!r} is its own parent")
        if parents[c] is not None:
            raise HierarchyError(f"node {child!r} has two parents")
        parents[c] = p

    roots = [i for i, p in enumerate(parents) if p is None]
    if len(roots) != 1:
        # every node on a cycle has a parent, so zero roots means a cycle
        if not roots:
            raise HierarchyError("cycle detected: no root")
        raise HierarchyError(
            "multiple roots: " + ", ".join(repr(names[r]) for r in roots)
        )
    root = roots[0]

    children: list[list[int]] = [[] for _ in names]
    for c, p in enumerate(parents):
        if p is not None:
            children[p].append(c)

    seen = {root}
    stack = [root]
    while stack:
        for ch in children[stack.pop()]:
            seen.add(ch)
            stack.append(ch)
    if len(seen) != len(names):
        stray = sorted(names[i] for i in set(range(len(names))) - seen)
        raise HierarchyError(f"cycle detected among {stray}")

    return Hierarchy(
        names=names,
        parents=tuple(parents),
        root=root,
        children=tuple(tuple(ch) for ch in children),
    )


def leaves(h: Hierarchy) -> list[int]:
    """Node ids with no children, in node order."""
    return [i for i in range(h.size) if h.is_leaf(i)]


def internal_nodes(h: Hierarchy) -> list[int]:
    return [i for i in range(h.size) if not h.is_leaf(i)]


@dataclass(frozen=True)
class ParamIndex:
    """Maps each ``(node, group)`` to a contiguous slice of one flat vector.

    Blocks are laid out node-major: all groups of node 0, then node 1, etc.
    """

    groups: tuple[tuple[str, int], ...]
    n_nodes: int

    @property
    def node_dim(self) -> int:
        return sum(size for _, size in self.groups)

    @property
    def total_dim(self) -> int:
        return self.n_nodes * self.node_dim

    def group_offset(self, group: str) -> int:
        off = 0
        for g, size in self.groups:
            if g == group:
                return off
            off += size
        raise KeyError(f"unknown group {group!r}")

    def group_size(self, group: str) -> int:
        return dict(self.groups)[group]

    def block(self, node: int, group: str) -> slice:
        if not 0 <= node < self.n_nodes:
            raise IndexError(node)
        start = node * self.node_dim + self.group_offset(group)
        return slice(start, start + self.group_size(group))

    def node_slice(self, node: int) -> slice:
        return slice(node * self.node_dim, (node + 1) * self.node_dim)

    @property
    def blocks(self) -> dict[tuple[int, str], slice]:
        return {
            (n, g): self.block(n, g) for n in range(self.n_nodes) for g, _ in self.groups
        }

    def locate(self, coord: int) -> tuple[int, str, int]:
        """Inverse map: flat coordinate -> (node, group, offset within group)."""
        if not 0 <= coord < self.total_dim:
            raise IndexError(coord)
        node, rem = divmod(coord, self.node_dim)
        for g, size in self.groups:
            if rem < size:
                return node, g, rem
            rem -= size
        raise AssertionError("unreachable")

    def group_coords(self, group: str, nodes: Iterable[int] | None = None) -> np.ndarray:
        """All flat coordinates belonging to ``group`` (optionally a node subset)."""
        if nodes is None:
            nodes = range(self.n_nodes)
        parts = [np.arange(self.block(n, group).start, self.block(n, group).stop) for n in nodes]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


def layout(h: Hierarchy, groups: Sequence[tuple[str, int]]) -> ParamIndex:
    """Build the flat layout for a model family with the given group sizes."""
    groups = tuple((str(g), int(s)) for g, s in groups)
    if not groups:
        raise ValueError("model family defines no parameter groups")
    for g, s in groups:
        if s <= 0:
            raise ValueError(f"group {g!r} has non-positive size {s}")
    if len({g for g, _ in groups}) != len(groups):
        raise ValueError("duplicate group labels")
    return ParamIndex(groups=groups, n_nodes=h.size)


@dataclass
class ParamState:
    """Flat parameter vector plus the layout that gives it structure."""

    index: ParamIndex
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.index.total_dim,):
            raise ValueError(
                f"state has shape {self.values.shape}, layout needs ({self.index.total_dim},)"
            )

    def get(self, node: int, group: str) -> np.ndarray:
        return self.values[self.index.block(node, group)]

    def set(self, node: int, group: str, value) -> None:
        self.values[self.index.block(node, group)] = value

    def copy(self) -> "ParamState":
        return ParamState(self.index, self.values.copy())
