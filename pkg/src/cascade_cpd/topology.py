"""Network topology and pairwise influence rates.

Nodes are 0-based in the Python API. The on-disk edge-list format and
MATPOWER bus numbers are 1-based (or arbitrary bus IDs) and are converted
on load.
"""

from __future__ import annotations

import io
import json
import re
from collections import deque
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np


class TopologyError(ValueError):
    """Raised for malformed graph input."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``.

    ``edges`` holds pairs ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise TopologyError("graph must have at least one node")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"self-loop on node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i}, {j}) outside node range 0..{self.n - 1}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in norm:
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(a)) for a in adj))

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])


@dataclass(frozen=True, eq=False)
class InfluenceMatrix:
    """Dense influence rates; ``rates[j, i]`` is the influence of node j on node i."""

    rates: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rates, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise TopologyError("influence matrix must be square")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise TopologyError("influence rates must be finite and nonnegative")
        if np.any(np.diag(r) != 0):
            raise TopologyError("self-influence is not allowed")
        r.setflags(write=False)
        object.__setattr__(self, "rates", r)

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    def __call__(self, j: int, i: int) -> float:
        return float(self.rates[j, i])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InfluenceMatrix):
            return NotImplemented
        return self.rates.shape == other.rates.shape and bool(np.array_equal(self.rates, other.rates))

    def check_support(self, graph: Graph) -> None:
        """Raise unless every positive rate sits on a graph edge."""
        if self.n != graph.n:
            raise TopologyError(f"influence matrix has {self.n} nodes, graph has {graph.n}")
        for j, i in zip(*np.nonzero(self.rates)):
            if not graph.has_edge(int(j), int(i)):
                raise TopologyError(f"positive rate on non-edge ({j}, {i})")


def uniform_alpha(graph: Graph, a0: float) -> InfluenceMatrix:
    """Assign the same rate ``a0`` in both directions of every edge."""
    if not a0 > 0 or not np.isfinite(a0):
        raise TopologyError(f"a0 must be a positive finite rate, got {a0}")
    rates = np.zeros((graph.n, graph.n))
    for i, j in graph.edges:
        rates[i, j] = rates[j, i] = a0
    return InfluenceMatrix(rates)


def complete_graph(n: int) -> Graph:
    return Graph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def star_graph(leaves: int) -> Graph:
    """Hub node 0 joined to nodes ``1..leaves``."""
    return Graph(leaves + 1, frozenset((0, k) for k in range(1, leaves + 1)))


def path_graph(n: int) -> Graph:
    return Graph(n, frozenset((i, i + 1) for i in range(n - 1)))


def _open_text(source: str | TextIO) -> TextIO:
    return io.StringIO(source) if isinstance(source, str) else source


def load_edge_list(source: str | TextIO) -> tuple[Graph, InfluenceMatrix]:
    """Parse ``i,j,alpha_ij[,alpha_ji]`` lines (1-based nodes, ``#`` comments).

    A missing reverse rate defaults to the forward rate.
    """
    stream = _open_text(source)
    entries: list[tuple[int, int, float, float]] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            raise TopologyError(f"line {lineno}: expected 3 or 4 fields, got {len(parts)}")
        try:
            i, j = int(parts[0]), int(parts[1])
            fwd = float(parts[2])
            rev = float(parts[3]) if len(parts) == 4 else fwd
        except ValueError as exc:
            raise TopologyError(f"line {lineno}: {exc}") from None
        if i < 1 or j < 1:
            raise TopologyError(f"line {lineno}: node indices are 1-based")
        if i == j:
            raise TopologyError(f"line {lineno}: self-loop on node {i}")
        if fwd < 0 or rev < 0 or not (np.isfinite(fwd) and np.isfinite(rev)):
            raise TopologyError(f"line {lineno}: rates must be finite and >= 0")
        entries.append((i - 1, j - 1, fwd, rev))
    if not entries:
        raise TopologyError("empty graph rejected")
    n = max(max(i, j) for i, j, _, _ in entries) + 1
    rates = np.zeros((n, n))
    edges = set()
    for i, j, fwd, rev in entries:
        edges.add((min(i, j), max(i, j)))
        rates[i, j] = fwd
        rates[j, i] = rev
    return Graph(n, frozenset(edges)), InfluenceMatrix(rates)


def emit_edge_list(graph: Graph, alpha: InfluenceMatrix, out: TextIO | None = None) -> str:
    """Write the edge-list format; returns the text as well."""
    lines = ["# i,j,alpha_ij,alpha_ji (1-based)"]
    for i, j in sorted(graph.edges):
        lines.append(f"{i + 1},{j + 1},{alpha(i, j)!r},{alpha(j, i)!r}")
    text = "\n".join(lines) + "\n"
    if out is not None:
        out.write(text)
    return text


_BRANCH_RE = re.compile(r"mpc\.branch\s*=\s*\[(.*?)\]\s*;", re.S)


def parse_matpower_branches(text: str) -> tuple[Graph, list[int]]:
    """Build the bus graph from the ``mpc.branch`` block of a MATPOWER case.

    Returns the graph and ``bus_ids`` where ``bus_ids[k]`` is the original
    bus number of node ``k``. Parallel branches collapse to one edge.
    """
    m = _BRANCH_RE.search(text)
    if m is None:
        raise TopologyError("no mpc.branch block found")
    pairs: list[tuple[int, int]] = []
    for lineno, raw in enumerate(m.group(1).splitlines(), start=1):
        line = raw.split("%", 1)[0].replace(";", " ").strip()
        if not line:
            continue
        cols = line.replace(",", " ").split()
        if len(cols) < 2:
            raise TopologyError(f"branch row {lineno}: fewer than two columns")
        try:
            fb, tb = float(cols[0]), float(cols[1])
        except ValueError:
            raise TopologyError(f"branch row {lineno}: non-numeric bus id") from None
        if fb != int(fb) or tb != int(tb):
            raise TopologyError(f"branch row {lineno}: bus ids must be integers")
        pairs.append((int(fb), int(tb)))
    if not pairs:
        raise TopologyError("branch block is empty")
    bus_ids = sorted({b for p in pairs for b in p})
    index = {b: k for k, b in enumerate(bus_ids)}
    edges = {(min(index[a], index[b]), max(index[a], index[b])) for a, b in pairs if a != b}
    return Graph(len(bus_ids), frozenset(edges)), bus_ids


def bfs_subgraph(graph: Graph, start: int, size: int) -> tuple[Graph, list[int]]:
    """Induced subgraph on the first ``size`` nodes reached by BFS from ``start``.

    Returns the subgraph and the original node index of each new node.
    """
    seen = [start]
    mark = {start}
    queue = deque([start])
    while queue and len(seen) < size:
        u = queue.popleft()
        for v in graph.neighbors[u]:
            if v not in mark and len(seen) < size:
                mark.add(v)
                seen.append(v)
                queue.append(v)
    index = {v: k for k, v in enumerate(seen)}
    edges = {
        (min(index[i], index[j]), max(index[i], index[j]))
        for i, j in graph.edges
        if i in index and j in index
    }
    return Graph(len(seen), frozenset(edges)), seen


def to_json(graph: Graph, alpha: InfluenceMatrix) -> str:
    """Canonical JSON dump (sorted 0-based directed rates)."""
    rates = [
        [int(j), int(i), float(alpha.rates[j, i])]
        for j, i in sorted(zip(*np.nonzero(alpha.rates)))
    ]
    doc = {"n": graph.n, "edges": [list(e) for e in sorted(graph.edges)], "rates": rates}
    return json.dumps(doc, sort_keys=True)


def from_json(text: str) -> tuple[Graph, InfluenceMatrix]:
    doc = json.loads(text)
    graph = Graph(int(doc["n"]), frozenset((int(a), int(b)) for a, b in doc["edges"]))
    rates = np.zeros((graph.n, graph.n))
    for j, i, a in doc["rates"]:
        rates[int(j), int(i)] = float(a)
    alpha = InfluenceMatrix(rates)
    alpha.check_support(graph)
    return graph, alpha


def adjacency_csr(alpha: InfluenceMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Out-neighbour lists in CSR form: ``indptr, targets, rates``."""
    indptr = [0]
    targets: list[int] = []
    vals: list[float] = []
    for j in range(alpha.n):
        nz = np.nonzero(alpha.rates[j])[0]
        targets.extend(int(i) for i in nz)
        vals.extend(float(alpha.rates[j, i]) for i in nz)
        indptr.append(len(targets))
    return (
        np.asarray(indptr, dtype=np.int64),
        np.asarray(targets, dtype=np.int64),
        np.asarray(vals, dtype=float),
    )
