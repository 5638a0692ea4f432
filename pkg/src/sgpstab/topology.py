"""Directed communication graphs and the standard topology catalog."""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable

MAX_NODES = 256


class TopologyKind(str, enum.Enum):
    FULLY_CONNECTED = "FullyConnected"
    DI_EXP = "DiExp"
    BIPARTITE = "Bipartite"
    BTREE = "BTree"
    DI_RING = "DiRing"
    SUB_RING = "SubRing"
    STAR = "Star"

    @classmethod
    def parse(cls, name: "str | TopologyKind") -> "TopologyKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "").replace("-", "")
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"unknown topology kind {name!r}")


@dataclass(frozen=True)
class DirectedGraph:
    """Graph on nodes 0..m-1. An edge (j, i) means i receives from j.

    Self-loops are never stored; neighbor sets include the node itself.
    """

    m: int
    edges: frozenset

    def __post_init__(self):
        if not isinstance(self.m, int) or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if not (0 <= j < self.m and 0 <= i < self.m):
                raise ValueError(f"edge ({j}, {i}) out of range for m={self.m}")
            if j == i:
                raise ValueError(f"self-loop ({j}, {i}) must not be stored")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[tuple[int, int]]) -> "DirectedGraph":
        """Build a graph, silently dropping duplicates and self-pairs."""
        return cls(m, frozenset((j, i) for j, i in edges if j != i))

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def in_neighbors(self, i: int) -> set[int]:
        _check_node(self, i)
        return {j for j, k in self.edges if k == i} | {i}

    def out_neighbors(self, i: int) -> set[int]:
        _check_node(self, i)
        return {k for j, k in self.edges if j == i} | {i}

    def adjacency(self) -> list[list[int]]:
        """Out-adjacency lists (self excluded), sorted."""
        adj: list[list[int]] = [[] for _ in range(self.m)]
        for j, i in sorted(self.edges):
            adj[j].append(i)
        return adj


def _check_node(g: DirectedGraph, i: int):
    if not 0 <= i < g.m:
        raise IndexError(f"node {i} out of range for m={g.m}")


def in_neighbors(g: DirectedGraph, i: int) -> set[int]:
    return g.in_neighbors(i)


def out_neighbors(g: DirectedGraph, i: int) -> set[int]:
    return g.out_neighbors(i)


def is_balanced(g: DirectedGraph) -> bool:
    indeg = [0] * g.m
    outdeg = [0] * g.m
    for j, i in g.edges:
        outdeg[j] += 1
        indeg[i] += 1
    return indeg == outdeg


def _reach(adj: list[list[int]], src: int) -> int:
    seen = [False] * len(adj)
    seen[src] = True
    queue = deque([src])
    count = 1
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                count += 1
                queue.append(w)
    return count


def is_strongly_connected(g: DirectedGraph) -> bool:
    # forward and reverse BFS from node 0
    fwd = g.adjacency()
    rev: list[list[int]] = [[] for _ in range(g.m)]
    for j, i in g.edges:
        rev[i].append(j)
    return _reach(fwd, 0) == g.m and _reach(rev, 0) == g.m


def _bidirected(pairs):
    for a, b in pairs:
        yield a, b
        yield b, a


def build_topology(kind: "TopologyKind | str", m: int) -> DirectedGraph:
    kind = TopologyKind.parse(kind)
    if isinstance(m, bool) or not isinstance(m, int):
        raise ValueError(f"m must be an integer, got {m!r}")
    if m < 1 or m > MAX_NODES:
        raise ValueError(f"m must be in [1, {MAX_NODES}], got {m}")

    if kind is TopologyKind.FULLY_CONNECTED:
        edges = [(j, i) for j in range(m) for i in range(m)]
    elif kind is TopologyKind.DI_EXP:
        hops = [2 ** k for k in range(math.ceil(math.log2(m)))] if m > 1 else []
        edges = [(i, (i + h) % m) for i in range(m) for h in hops]
    elif kind is TopologyKind.BIPARTITE:
        if m % 2:
            raise ValueError(f"Bipartite requires even m, got {m}")
        half = m // 2
        edges = list(_bidirected((a, b) for a in range(half) for b in range(half, m)))
    elif kind is TopologyKind.BTREE:
        edges = list(_bidirected(((i - 1) // 2, i) for i in range(1, m)))
    elif kind is TopologyKind.DI_RING:
        edges = [(i, (i + 1) % m) for i in range(m)]
    elif kind is TopologyKind.SUB_RING:
        edges = [(i, (i + 1) % m) for i in range(m)] + [(0, m // 2)]
    elif kind is TopologyKind.STAR:
        edges = list(_bidirected((0, i) for i in range(1, m)))
    else:  # pragma: no cover
        raise ValueError(kind)
    return DirectedGraph.from_edges(m, edges)


def format_edge_list(g: DirectedGraph) -> str:
    lines = [str(g.m)] + [f"{j} {i}" for j, i in g.sorted_edges()]
    return "\n".join(lines) + "\n"


def parse_edge_list(text: str) -> DirectedGraph:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or len(rows[0]) != 1:
        raise ValueError("edge list must start with a line holding m")
    m = int(rows[0][0])
    edges = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ValueError(f"line {lineno}: expected 'j i', got {' '.join(row)!r}")
        j, i = int(row[0]), int(row[1])
        if (j, i) in edges:
            raise ValueError(f"line {lineno}: duplicate edge ({j}, {i})")
        edges.add((j, i))
    return DirectedGraph(m, frozenset(edges))
