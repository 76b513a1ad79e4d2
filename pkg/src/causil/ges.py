"""Greedy equivalence search over CPDAGs with forbidden-edge knowledge.

The search starts from the empty graph, greedily applies the best valid
Insert(x, y, T) while it improves the score (forward phase), then the best
valid Delete(x, y, H) (backward phase). After every operator the graph is
re-closed: a consistent DAG extension is taken, its completed pattern is
computed, and edges with exactly one forbidden direction are oriented the
allowed way followed by Meek propagation.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .graph import (Knowledge, Pdag, apply_meek_rules, consistent_extension, dag_to_cpdag,
                    meek_closure)
from .errors import InconsistentPattern
from .score import BicScorer, EstimatorKind, ScoreParams, StackedDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GesConfig:
    estimator: EstimatorKind = EstimatorKind.LINEAR
    params: ScoreParams = ScoreParams()
    knowledge: Knowledge = Knowledge()
    max_parents: int | None = None
    jobs: int = 1
    fast: bool = False
    repeat: bool = False

    def __post_init__(self):
        if self.max_parents is not None and self.max_parents < 1:
            raise ValueError("max_parents must be >= 1")


@dataclass(frozen=True)
class InsertCandidate:
    x: int
    y: int
    t_set: frozenset
    delta: float

    def key(self):
        return (-self.delta, self.x, self.y, tuple(sorted(self.t_set)))


@dataclass(frozen=True)
class DeleteCandidate:
    x: int
    y: int
    h_set: frozenset
    delta: float

    def key(self):
        return (-self.delta, self.x, self.y, tuple(sorted(self.h_set)))


@dataclass
class SearchStats:
    inserts: int = 0
    deletes: int = 0
    candidates_scored: int = 0
    forbidden_scored: int = 0
    rejected_by_knowledge: int = 0
    rejected_inconsistent: int = 0
    flagged: set = field(default_factory=set)


@dataclass
class FgesResult:
    pdag: Pdag
    trace: list
    stats: SearchStats
    score_evaluations: int


# ---------------------------------------------------------------------------
# mutable working pattern over column indices
# ---------------------------------------------------------------------------

class _Pattern:
    __slots__ = ("n", "pa", "ch", "ne")

    def __init__(self, n: int):
        self.n = n
        self.pa = [set() for _ in range(n)]
        self.ch = [set() for _ in range(n)]
        self.ne = [set() for _ in range(n)]

    def copy(self) -> "_Pattern":
        p = _Pattern.__new__(_Pattern)
        p.n = self.n
        p.pa = [set(s) for s in self.pa]
        p.ch = [set(s) for s in self.ch]
        p.ne = [set(s) for s in self.ne]
        return p

    def adj(self, i: int) -> set:
        return self.pa[i] | self.ch[i] | self.ne[i]

    def adjacent(self, i: int, j: int) -> bool:
        return j in self.pa[i] or j in self.ch[i] or j in self.ne[i]

    def is_clique(self, nodes) -> bool:
        nodes = list(nodes)
        for a in range(len(nodes)):
            for b in range(a + 1, len(nodes)):
                if not self.adjacent(nodes[a], nodes[b]):
                    return False
        return True

    def add_directed(self, a: int, b: int):
        self.ne[a].discard(b)
        self.ne[b].discard(a)
        self.ch[a].add(b)
        self.pa[b].add(a)

    def remove_edge(self, a: int, b: int):
        for s in (self.pa, self.ch, self.ne):
            s[a].discard(b)
            s[b].discard(a)

    def semi_directed_reaches(self, src: int, dst: int, block: set) -> bool:
        """Is there a semi-directed path src ~> dst avoiding ``block``?"""
        seen = {src}
        stack = [src]
        while stack:
            v = stack.pop()
            for w in self.ne[v] | self.ch[v]:
                if w == dst:
                    return True
                if w in seen or w in block:
                    continue
                seen.add(w)
                stack.append(w)
        return False

    def to_pdag(self) -> Pdag:
        directed = frozenset((a, b) for b in range(self.n) for a in self.pa[b])
        undirected = frozenset(frozenset((a, b)) for a in range(self.n) for b in self.ne[a] if a < b)
        return Pdag(tuple(range(self.n)), directed, undirected)

    @classmethod
    def from_pdag(cls, pdag: Pdag) -> "_Pattern":
        p = cls(len(pdag.nodes))
        for a, b in pdag.directed:
            p.pa[b].add(a)
            p.ch[a].add(b)
        for e in pdag.undirected:
            a, b = tuple(e)
            p.ne[a].add(b)
            p.ne[b].add(a)
        return p


def _cliques_within(pattern: _Pattern, pool: list):
    """Every subset of ``pool`` that is a clique in ``pattern`` (incl. empty)."""
    out = [()]

    def grow(prefix, start):
        for i in range(start, len(pool)):
            v = pool[i]
            if all(pattern.adjacent(v, u) for u in prefix):
                nxt = prefix + (v,)
                out.append(nxt)
                grow(nxt, i + 1)

    grow((), 0)
    return out


def _subsets(items: list):
    out = [()]
    for v in items:
        out += [s + (v,) for s in out]
    return out


def _reclose(p: _Pattern, F: np.ndarray | None, flagged: set) -> _Pattern:
    cpdag = dag_to_cpdag(consistent_extension(p.to_pdag()))
    if F is not None:
        cpdag = _orient_by_knowledge(cpdag, F, flagged)
    return _Pattern.from_pdag(cpdag)


def _knowledge_of(F: np.ndarray) -> Knowledge:
    return Knowledge(frozenset((int(a), int(b)) for a, b in zip(*np.nonzero(F))))


def _orient_by_knowledge(pdag: Pdag, F: np.ndarray, flagged: set) -> Pdag:
    """Point every undirected edge with exactly one forbidden direction the
    allowed way, in index order, propagating with Meek after each one."""
    know = _knowledge_of(F)
    pdag, blocked = meek_closure(pdag, know)
    flagged |= blocked
    skip: set = set()
    while True:
        pending = sorted(tuple(sorted(e)) for e in pdag.undirected
                         if e not in skip and F[min(e), max(e)] != F[max(e), min(e)])
        if not pending:
            return pdag
        a, b = pending[0]
        edge = (b, a) if F[a, b] else (a, b)
        trial = Pdag(pdag.nodes, pdag.directed | {edge}, pdag.undirected - {frozenset(edge)})
        try:
            pdag, blocked = meek_closure(trial, know)
            flagged |= blocked
        except InconsistentPattern:
            # cannot follow the knowledge here; leave the edge undirected
            skip.add(frozenset(edge))
            flagged.add(edge)


def _violates(p: _Pattern, F: np.ndarray | None) -> bool:
    if F is None:
        return False
    return any(F[a, b] for b in range(p.n) for a in p.pa[b])


# ---------------------------------------------------------------------------
# the search
# ---------------------------------------------------------------------------

class _Search:
    def __init__(self, ds: StackedDataset, nodes: tuple, cfg: GesConfig):
        self.ds = ds
        self.nodes = nodes
        self.cfg = cfg
        self.n = len(nodes)
        self.score = BicScorer(ds, cfg.estimator, cfg.params)
        F = cfg.knowledge.matrix(nodes)
        self.F = F if F.any() else None
        self.stats = SearchStats()
        self.trace: list = []
        self.pool = ThreadPoolExecutor(cfg.jobs) if cfg.jobs > 1 else None
        self.allowed_pairs = None

    def forbidden(self, a: int, b: int) -> bool:
        return self.F is not None and bool(self.F[a, b])

    # -- candidate generation ------------------------------------------------

    def insert_candidates(self, p: _Pattern) -> list:
        out = []
        cap = self.cfg.max_parents
        for y in range(self.n):
            adj_y = p.adj(y)
            for x in range(self.n):
                if x == y or x in adj_y or self.forbidden(x, y):
                    continue
                if self.allowed_pairs is not None and (x, y) not in self.allowed_pairs:
                    continue
                adj_x = p.adj(x)
                nayx = p.ne[y] & adj_x
                if not p.is_clique(nayx):
                    continue
                t0 = sorted(p.ne[y] - adj_x)
                for T in _cliques_within(p, t0):
                    S = nayx.union(T)
                    if T and not all(p.adjacent(t, u) for t in T for u in nayx):
                        continue
                    if self.F is not None and any(self.F[t, y] for t in T):
                        continue
                    if cap is not None and len(p.pa[y] | S) + 1 > cap:
                        continue
                    if p.semi_directed_reaches(y, x, S):
                        continue
                    out.append((x, y, frozenset(T), frozenset(p.pa[y] | S)))
        return out

    def delete_candidates(self, p: _Pattern) -> list:
        out = []
        for y in range(self.n):
            for x in sorted(p.pa[y] | p.ne[y]):
                h0 = sorted(p.ne[y] & p.adj(x))
                for H in _subsets(h0):
                    rest = set(h0) - set(H)
                    if not p.is_clique(rest):
                        continue
                    base = frozenset((p.pa[y] | rest) - {x})
                    out.append((x, y, frozenset(H), base))
        return out

    # -- scoring -------------------------------------------------------------

    def _insert_delta(self, cand):
        x, y, _, base = cand
        if self.forbidden(x, y):
            self.stats.forbidden_scored += 1
        return self.score(y, base | {x}) - self.score(y, base)

    def _delete_delta(self, cand):
        x, y, _, base = cand
        return self.score(y, base) - self.score(y, base | {x})

    def _scored(self, cands, fn):
        self.stats.candidates_scored += len(cands)
        if self.pool is not None and len(cands) > 8:
            return list(self.pool.map(fn, cands))
        return [fn(c) for c in cands]

    # -- phases --------------------------------------------------------------

    def total(self, p: _Pattern) -> float:
        dag = consistent_extension(p.to_pdag())
        parents = {v: set() for v in range(self.n)}
        for a, b in dag.edges:
            parents[b].add(a)
        return sum(self.score(v, ps) for v, ps in parents.items())

    def forward(self, p: _Pattern) -> tuple[_Pattern, int]:
        applied = 0
        if self.cfg.fast:
            self.allowed_pairs = {
                (x, y) for y in range(self.n) for x in range(self.n)
                if x != y and not self.forbidden(x, y)
                and self.score(y, {x}) - self.score(y, ()) > 0}
        while True:
            cands = self.insert_candidates(p)
            deltas = self._scored(cands, self._insert_delta)
            ranked = sorted((InsertCandidate(c[0], c[1], c[2], d) for c, d in zip(cands, deltas) if d > 0),
                            key=InsertCandidate.key)
            nxt = None
            for cand in ranked:
                trial = p.copy()
                trial.add_directed(cand.x, cand.y)
                for t in cand.t_set:
                    trial.add_directed(t, cand.y)
                flagged: set = set()
                try:
                    trial = _reclose(trial, self.F, flagged)
                except InconsistentPattern:
                    self.stats.rejected_inconsistent += 1
                    continue
                if _violates(trial, self.F):
                    self.stats.rejected_by_knowledge += 1
                    continue
                nxt = trial
                self.stats.flagged |= flagged
                self.stats.inserts += 1
                self._log("insert", cand.x, cand.y, cand.t_set, cand.delta, nxt)
                break
            if nxt is None:
                break
            p = nxt
            applied += 1
        self.allowed_pairs = None
        return p, applied

    def backward(self, p: _Pattern) -> tuple[_Pattern, int]:
        applied = 0
        while True:
            cands = self.delete_candidates(p)
            deltas = self._scored(cands, self._delete_delta)
            ranked = sorted((DeleteCandidate(c[0], c[1], c[2], d) for c, d in zip(cands, deltas) if d > 0),
                            key=DeleteCandidate.key)
            nxt = None
            for cand in ranked:
                trial = p.copy()
                x, y = cand.x, cand.y
                trial.remove_edge(x, y)
                for h in cand.h_set:
                    if h in trial.ne[y]:
                        trial.add_directed(y, h)
                    if h in trial.ne[x]:
                        trial.add_directed(x, h)
                flagged: set = set()
                try:
                    trial = _reclose(trial, self.F, flagged)
                except InconsistentPattern:
                    self.stats.rejected_inconsistent += 1
                    continue
                if _violates(trial, self.F):
                    self.stats.rejected_by_knowledge += 1
                    continue
                nxt = trial
                self.stats.flagged |= flagged
                self.stats.deletes += 1
                self._log("delete", x, y, cand.h_set, cand.delta, nxt)
                break
            if nxt is None:
                break
            p = nxt
            applied += 1
        return p, applied

    def _log(self, op, x, y, s, delta, p):
        entry = {"op": op, "x": str(self.nodes[x]), "y": str(self.nodes[y]),
                 "set": sorted(str(self.nodes[v]) for v in s), "delta": delta,
                 "total": self.total(p)}
        self.trace.append(entry)
        log.debug("%s", entry)

    def run(self) -> _Pattern:
        p = _Pattern(self.n)
        try:
            while True:
                p, a = self.forward(p)
                p, b = self.backward(p)
                if not self.cfg.repeat or a + b == 0:
                    return p
        finally:
            if self.pool is not None:
                self.pool.shutdown()


def _resolve_nodes(ds: StackedDataset, node_map: Mapping | None) -> tuple:
    if node_map is None:
        return ds.columns
    nodes = tuple(node_map[c] for c in ds.columns)
    if len(set(nodes)) != len(nodes):
        raise ValueError("node_map must map columns to unique nodes")
    return nodes


def fges_search(ds: StackedDataset, node_map: Mapping | None = None,
                cfg: GesConfig = GesConfig()) -> FgesResult:
    """Run the search and return the pattern together with its trace."""
    nodes = _resolve_nodes(ds, node_map)
    search = _Search(ds, nodes, cfg)
    p = search.run()
    idx = p.to_pdag()
    pdag = Pdag(nodes,
                frozenset((nodes[a], nodes[b]) for a, b in idx.directed),
                frozenset(frozenset(nodes[v] for v in e) for e in idx.undirected))
    stats = search.stats
    stats.flagged = {(nodes[a], nodes[b]) for a, b in stats.flagged}
    return FgesResult(pdag, search.trace, stats, search.score.evaluations)


def run_fges(ds: StackedDataset, node_map: Mapping | None = None, cfg: GesConfig = GesConfig()) -> Pdag:
    return fges_search(ds, node_map, cfg).pdag


# ---------------------------------------------------------------------------
# operator-level API on Pdag values
# ---------------------------------------------------------------------------

def _indexed(pdag: Pdag) -> tuple[_Pattern, dict]:
    pos = pdag.position
    p = _Pattern(len(pdag.nodes))
    for a, b in pdag.directed:
        p.add_directed(pos[a], pos[b])
    for e in pdag.undirected:
        a, b = (pos[v] for v in e)
        p.ne[a].add(b)
        p.ne[b].add(a)
    return p, pos


def valid_insert(x: Hashable, y: Hashable, t_set, pdag: Pdag, knowledge: Knowledge = Knowledge()) -> bool:
    if knowledge.is_forbidden(x, y):
        return False
    p, pos = _indexed(pdag)
    xi, yi = pos[x], pos[y]
    if p.adjacent(xi, yi):
        return False
    T = {pos[t] for t in t_set}
    nayx = p.ne[yi] & p.adj(xi)
    S = nayx | T
    if not p.is_clique(S):
        return False
    return not p.semi_directed_reaches(yi, xi, S)


def valid_delete(x: Hashable, y: Hashable, h_set, pdag: Pdag) -> bool:
    p, pos = _indexed(pdag)
    xi, yi = pos[x], pos[y]
    nayx = p.ne[yi] & p.adj(xi)
    return p.is_clique(nayx - {pos[h] for h in h_set})


def _columns(ds: StackedDataset, pdag: Pdag, node_map):
    if node_map is None:
        return {v: ds.index(v) for v in pdag.nodes}
    inv = {node: col for col, node in node_map.items()}
    return {v: ds.index(inv[v]) for v in pdag.nodes}


def insert_delta(ds: StackedDataset, x, y, t_set, pdag: Pdag, cfg: GesConfig = GesConfig(),
                 node_map=None) -> float:
    p, pos = _indexed(pdag)
    col = _columns(ds, pdag, node_map)
    back = {pos[v]: col[v] for v in pdag.nodes}
    xi, yi = pos[x], pos[y]
    base = p.pa[yi] | (p.ne[yi] & p.adj(xi)) | {pos[t] for t in t_set}
    scorer = BicScorer(ds, cfg.estimator, cfg.params)
    bcols = {back[v] for v in base}
    return scorer(back[yi], bcols | {back[xi]}) - scorer(back[yi], bcols)


def delete_delta(ds: StackedDataset, x, y, h_set, pdag: Pdag, cfg: GesConfig = GesConfig(),
                 node_map=None) -> float:
    p, pos = _indexed(pdag)
    col = _columns(ds, pdag, node_map)
    back = {pos[v]: col[v] for v in pdag.nodes}
    xi, yi = pos[x], pos[y]
    rest = (p.ne[yi] & p.adj(xi)) - {pos[h] for h in h_set}
    base = (p.pa[yi] | rest) - {xi}
    scorer = BicScorer(ds, cfg.estimator, cfg.params)
    bcols = {back[v] for v in base}
    return scorer(back[yi], bcols) - scorer(back[yi], bcols | {back[xi]})


def is_closed(pdag: Pdag, knowledge: Knowledge | None = None) -> bool:
    return apply_meek_rules(pdag, knowledge) == pdag
