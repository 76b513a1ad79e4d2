"""Service call graphs, metric-level graphs and orientation machinery.

Graph values are immutable. Nodes of a :class:`Pdag` / :class:`Dag` may be any
hashable value (usually :class:`MetricNode`); whenever an order is needed ties
are broken by position in ``nodes``.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Hashable, Iterable

import numpy as np

from . import kernels
from .errors import CycleDetected, InconsistentPattern, InvalidConfig


class MetricCategory(IntEnum):
    WORKLOAD = 0
    CPU = 1
    MEM = 2
    LATENCY = 3
    ERROR = 4

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def short(self) -> str:
        return _SHORT[self]

    @classmethod
    def parse(cls, text: str) -> "MetricCategory":
        key = text.strip().lower()
        try:
            return _PARSE[key]
        except KeyError:
            raise ValueError(f"unknown metric category {text!r}") from None


_LABELS = {
    MetricCategory.WORKLOAD: "Workload",
    MetricCategory.CPU: "CpuUtil",
    MetricCategory.MEM: "MemUtil",
    MetricCategory.LATENCY: "Latency",
    MetricCategory.ERROR: "Error",
}
_SHORT = {
    MetricCategory.WORKLOAD: "workload",
    MetricCategory.CPU: "cpu",
    MetricCategory.MEM: "mem",
    MetricCategory.LATENCY: "latency",
    MetricCategory.ERROR: "error",
}
_PARSE = {}
for _c in MetricCategory:
    _PARSE[_LABELS[_c].lower()] = _c
    _PARSE[_SHORT[_c]] = _c
    _PARSE[_c.name.lower()] = _c

W, UC, UM, L, E = (MetricCategory.WORKLOAD, MetricCategory.CPU, MetricCategory.MEM,
                   MetricCategory.LATENCY, MetricCategory.ERROR)


class MetricNode(tuple):
    """``(service, category)``; sorts by service id then category order."""

    __slots__ = ()

    def __new__(cls, service: int, category: MetricCategory):
        return tuple.__new__(cls, (int(service), MetricCategory(category)))

    @property
    def service(self) -> int:
        return self[0]

    @property
    def category(self) -> MetricCategory:
        return self[1]

    def __repr__(self) -> str:
        return f"{self.category.short}[{self.service}]"

    def to_json(self) -> dict:
        return {"service": self.service, "category": self.category.label}

    @classmethod
    def from_json(cls, obj: dict) -> "MetricNode":
        return cls(obj["service"], MetricCategory.parse(obj["category"]))


def metric_nodes(n_services: int) -> tuple[MetricNode, ...]:
    return tuple(MetricNode(s, c) for s in range(n_services) for c in MetricCategory)


# ---------------------------------------------------------------------------
# service call graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ServiceCallGraph:
    """Directed acyclic call graph; edge ``(a, b)`` means service a calls b."""

    n_services: int
    edges: frozenset

    def __post_init__(self):
        edges = frozenset((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        for a, b in edges:
            if a == b:
                raise InvalidConfig(f"self-loop on service {a}")
            if not (0 <= a < self.n_services and 0 <= b < self.n_services):
                raise InvalidConfig(f"edge {(a, b)} references unknown service")
        _kahn(range(self.n_services), edges)

    def callers(self, s: int) -> list[int]:
        return sorted(a for a, b in self.edges if b == s)

    def callees(self, s: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == s)

    def connected(self, a: int, b: int) -> bool:
        return (a, b) in self.edges or (b, a) in self.edges

    def exogenous(self) -> list[int]:
        called = {b for _, b in self.edges}
        return [s for s in range(self.n_services) if s not in called]

    def leaves(self) -> list[int]:
        calling = {a for a, _ in self.edges}
        return [s for s in range(self.n_services) if s not in calling]

    def caller_first_order(self) -> list[int]:
        return _kahn(range(self.n_services), self.edges)

    def to_json(self) -> dict:
        return {"n_services": self.n_services, "edges": [list(e) for e in sorted(self.edges)]}

    @classmethod
    def from_json(cls, obj: dict) -> "ServiceCallGraph":
        return cls(int(obj["n_services"]), frozenset(tuple(e) for e in obj["edges"]))


def _kahn(nodes: Iterable, edges: Iterable[tuple]) -> list:
    """Topological order with ties broken by position in ``nodes``."""
    nodes = list(nodes)
    pos = {v: i for i, v in enumerate(nodes)}
    indeg = [0] * len(nodes)
    out: list[list[int]] = [[] for _ in nodes]
    for a, b in edges:
        out[pos[a]].append(pos[b])
        indeg[pos[b]] += 1
    heap = [i for i, d in enumerate(indeg) if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(nodes[i])
        for j in out[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, j)
    if len(order) != len(nodes):
        raise CycleDetected("edge set contains a directed cycle")
    return order


# ---------------------------------------------------------------------------
# metric-level graphs
# ---------------------------------------------------------------------------

def _pair(a, b) -> frozenset:
    return frozenset((a, b))


@dataclass(frozen=True)
class Dag:
    nodes: tuple
    edges: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        _check_nodes(self.nodes, self.edges)

    def parents(self, v) -> list:
        pos = self.position
        return sorted((a for a, b in self.edges if b == v), key=pos.__getitem__)

    @property
    def position(self) -> dict:
        return {v: i for i, v in enumerate(self.nodes)}

    def is_acyclic(self) -> bool:
        try:
            _kahn(self.nodes, self.edges)
        except CycleDetected:
            return False
        return True

    def as_pdag(self) -> "Pdag":
        return Pdag(self.nodes, self.edges, frozenset())


@dataclass(frozen=True)
class Pdag:
    """Partially directed graph: ``directed`` holds (a, b) pairs, ``undirected``
    holds two-element frozensets."""

    nodes: tuple
    directed: frozenset = frozenset()
    undirected: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        directed = frozenset(tuple(e) for e in self.directed)
        undirected = frozenset(frozenset(e) for e in self.undirected)
        object.__setattr__(self, "directed", directed)
        object.__setattr__(self, "undirected", undirected)
        _check_nodes(self.nodes, directed)
        _check_nodes(self.nodes, (tuple(e) for e in undirected))
        seen = set()
        for a, b in directed:
            p = _pair(a, b)
            if p in seen or p in undirected:
                raise InconsistentPattern(f"pair {a}, {b} carries more than one edge")
            seen.add(p)

    @property
    def position(self) -> dict:
        return {v: i for i, v in enumerate(self.nodes)}

    def to_matrix(self) -> np.ndarray:
        pos = self.position
        A = np.zeros((len(self.nodes), len(self.nodes)), dtype=np.bool_)
        for a, b in self.directed:
            A[pos[a], pos[b]] = True
        for e in self.undirected:
            a, b = tuple(e)
            A[pos[a], pos[b]] = A[pos[b], pos[a]] = True
        return A

    @classmethod
    def from_matrix(cls, nodes, A: np.ndarray) -> "Pdag":
        directed, undirected = [], []
        n = len(nodes)
        for i in range(n):
            for j in range(n):
                if not A[i, j] or i == j:
                    continue
                if A[j, i]:
                    if i < j:
                        undirected.append(_pair(nodes[i], nodes[j]))
                else:
                    directed.append((nodes[i], nodes[j]))
        return cls(tuple(nodes), frozenset(directed), frozenset(undirected))


def _check_nodes(nodes, edges):
    if len(set(nodes)) != len(nodes):
        raise InvalidConfig("duplicate nodes")
    known = set(nodes)
    for e in edges:
        a, b = e
        if a == b:
            raise InvalidConfig(f"self-loop on {a!r}")
        if a not in known or b not in known:
            raise InvalidConfig(f"edge {e!r} references an unknown node")


@dataclass(frozen=True)
class Knowledge:
    """Forbidden directed edges. Forbidding a->b says nothing about b->a."""

    forbidden: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "forbidden", frozenset(tuple(e) for e in self.forbidden))

    def is_forbidden(self, a, b) -> bool:
        return (a, b) in self.forbidden

    def restrict(self, nodes: Iterable[Hashable]) -> "Knowledge":
        keep = set(nodes)
        return Knowledge(frozenset(e for e in self.forbidden if e[0] in keep and e[1] in keep))

    def matrix(self, nodes) -> np.ndarray:
        pos = {v: i for i, v in enumerate(nodes)}
        F = np.zeros((len(nodes), len(nodes)), dtype=np.bool_)
        for a, b in self.forbidden:
            if a in pos and b in pos:
                F[pos[a], pos[b]] = True
        return F

    def __len__(self) -> int:
        return len(self.forbidden)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def topological_sort(dag: Dag) -> list:
    return _kahn(dag.nodes, dag.edges)


def skeleton(g: Pdag | Dag) -> set[frozenset]:
    if isinstance(g, Dag):
        return {_pair(a, b) for a, b in g.edges}
    return {_pair(a, b) for a, b in g.directed} | set(g.undirected)


def apply_meek_rules(pdag: Pdag, knowledge: Knowledge | None = None) -> Pdag:
    """Close ``pdag`` under Meek's rules R1-R4.

    Orientations forbidden by ``knowledge`` are skipped (the edge stays
    undirected); use :func:`meek_closure` to see which ones were blocked.
    """
    return meek_closure(pdag, knowledge)[0]


def meek_closure(pdag: Pdag, knowledge: Knowledge | None = None) -> tuple[Pdag, set]:
    _kahn(pdag.nodes, pdag.directed)
    A = pdag.to_matrix()
    F = knowledge.matrix(pdag.nodes) if knowledge else np.zeros_like(A)
    out, blocked, status = kernels.meek(A, F)
    if status:
        raise InconsistentPattern("Meek rules demand opposite orientations of one edge")
    result = Pdag.from_matrix(pdag.nodes, out)
    try:
        _kahn(result.nodes, result.directed)
    except CycleDetected:
        raise InconsistentPattern("Meek rules closed a directed cycle") from None
    flagged = {(pdag.nodes[i], pdag.nodes[j]) for i, j in zip(*np.nonzero(blocked))
               if _pair(pdag.nodes[i], pdag.nodes[j]) in result.undirected}
    return result, flagged


def cpdag_to_dag(pdag: Pdag, knowledge: Knowledge | None = None) -> Dag:
    """Orient every undirected edge along a topological order of the directed part.

    With ``knowledge``, undirected edges with exactly one forbidden direction
    are first pointed the allowed way (skipping any that would close a cycle).
    """
    order_edges = set(pdag.directed)
    undirected = sorted(pdag.undirected, key=lambda e: sorted(pdag.position[v] for v in e))
    _kahn(pdag.nodes, order_edges)
    if knowledge is not None:
        for e in undirected:
            a, b = sorted(e, key=pdag.position.__getitem__)
            fa, fb = knowledge.is_forbidden(a, b), knowledge.is_forbidden(b, a)
            if fa == fb:
                continue
            edge = (b, a) if fa else (a, b)
            trial = order_edges | {edge}
            try:
                _kahn(pdag.nodes, trial)
            except CycleDetected:
                continue
            order_edges = trial
    order = _kahn(pdag.nodes, order_edges)
    rank = {v: i for i, v in enumerate(order)}
    edges = set(pdag.directed)
    for e in pdag.undirected:
        a, b = sorted(e, key=rank.__getitem__)
        edges.add((a, b))
    return Dag(pdag.nodes, frozenset(edges))


def dag_to_cpdag(dag: Dag) -> Pdag:
    """Completed pattern of ``dag``: keep v-structure edges, close with Meek."""
    topological_sort(dag)
    parents: dict = {v: set() for v in dag.nodes}
    for a, b in dag.edges:
        parents[b].add(a)
    adj = skeleton(dag)
    compelled = set()
    for c, pa in parents.items():
        pa = list(pa)
        for i in range(len(pa)):
            for j in range(i + 1, len(pa)):
                if _pair(pa[i], pa[j]) not in adj:
                    compelled.add((pa[i], c))
                    compelled.add((pa[j], c))
    undirected = frozenset(_pair(a, b) for a, b in dag.edges if (a, b) not in compelled)
    return apply_meek_rules(Pdag(dag.nodes, frozenset(compelled), undirected))


def consistent_extension(pdag: Pdag) -> Dag:
    """A DAG with the same skeleton and v-structures as ``pdag`` (Dor & Tarsi)."""
    nodes = pdag.nodes
    pos = pdag.position
    pa = {v: set() for v in nodes}
    ne = {v: set() for v in nodes}
    for a, b in pdag.directed:
        pa[b].add(a)
    for e in pdag.undirected:
        a, b = tuple(e)
        ne[a].add(b)
        ne[b].add(a)
    ch = {v: set() for v in nodes}
    for a, b in pdag.directed:
        ch[a].add(b)
    remaining = set(nodes)
    edges = set(pdag.directed)
    while remaining:
        for x in sorted(remaining, key=pos.__getitem__, reverse=True):
            if ch[x]:
                continue
            adj_x = pa[x] | ne[x]
            if all(y == v or _adjacent(y, v, pa, ch, ne) for y in ne[x] for v in adj_x):
                break
        else:
            raise InconsistentPattern("pattern admits no consistent extension")
        for y in ne[x]:
            edges.add((y, x))
            ne[y].discard(x)
        for p in pa[x]:
            ch[p].discard(x)
        remaining.discard(x)
        ne[x] = set()
        pa[x] = set()
    return Dag(nodes, frozenset(edges))


def _adjacent(a, b, pa, ch, ne) -> bool:
    return b in pa[a] or b in ch[a] or b in ne[a]


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _node_json(v):
    return v.to_json() if isinstance(v, MetricNode) else v


def graph_to_json(g: Pdag | Dag) -> dict:
    pos = g.position
    if isinstance(g, Dag):
        directed, undirected = g.edges, ()
    else:
        directed, undirected = g.directed, g.undirected
    d = sorted([pos[a], pos[b]] for a, b in directed)
    u = sorted(sorted(pos[v] for v in e) for e in undirected)
    return {"nodes": [_node_json(v) for v in g.nodes], "directed": d, "undirected": u}


def graph_from_json(obj: dict) -> Pdag | Dag:
    """Returns a :class:`Dag` when the document has no undirected edges."""
    nodes = tuple(MetricNode.from_json(v) if isinstance(v, dict) else v for v in obj["nodes"])
    directed = frozenset((nodes[i], nodes[j]) for i, j in obj.get("directed", []))
    undirected = frozenset(_pair(nodes[i], nodes[j]) for i, j in obj.get("undirected", []))
    if undirected:
        return Pdag(nodes, directed, undirected)
    return Dag(nodes, directed)


def dumps_graph(g: Pdag | Dag) -> str:
    return json.dumps(graph_to_json(g), sort_keys=True, indent=1) + "\n"


def to_dot(g: Pdag | Dag, name: str = "G") -> str:
    pos = g.position
    lines = [f"digraph {name} {{"]
    for v in g.nodes:
        lines.append(f'  n{pos[v]} [label="{v!r}"];')
    directed = g.edges if isinstance(g, Dag) else g.directed
    for a, b in sorted(directed, key=lambda e: (pos[e[0]], pos[e[1]])):
        lines.append(f"  n{pos[a]} -> n{pos[b]};")
    if isinstance(g, Pdag):
        for e in sorted(g.undirected, key=lambda e: sorted(pos[v] for v in e)):
            i, j = sorted(pos[v] for v in e)
            lines.append(f"  n{i} -> n{j} [dir=none];")
    lines.append("}")
    return "\n".join(lines) + "\n"
