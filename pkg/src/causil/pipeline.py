"""Per-service causal discovery over instance-level panels and its baselines.

For each service a dataset is built from the service's own five metrics plus
aggregated columns of its neighbours (callers' workload, callees' latency and
error), the search is run on it, and the service-internal edges are kept. The
fragments are merged, inter-service edges implied by the call graph are
wired in, and the result is oriented into a DAG.
"""
from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datagen import CATEGORIES, MetricPanel
from .errors import CycleDetected, MissingData
from .ges import GesConfig, fges_search
from .graph import (E, L, UC, UM, W, Dag, Knowledge, MetricNode, Pdag, ServiceCallGraph, _kahn,
                    cpdag_to_dag, metric_nodes)
from .score import EstimatorKind, ScoreParams, StackedDataset

log = logging.getLogger(__name__)


class Method(enum.Enum):
    CAUSIL = "causil"
    AGGREGATED = "aggregated"

    @classmethod
    def parse(cls, text: str) -> "Method":
        key = text.strip().lower()
        if key in ("causil", "instance"):
            return cls.CAUSIL
        if key in ("aggregated", "agg", "agg-fges", "avg-fges", "avg"):
            return cls.AGGREGATED
        raise ValueError(f"unknown method {text!r}")


AGG_FUNCTIONS = ("mean", "max", "min", "sum")


@dataclass(frozen=True)
class DiscoveryConfig:
    """``agg_fn`` only applies to the aggregated baseline. ``caller_agg`` and
    ``callee_agg`` aggregate neighbour columns for the instance-level method."""

    method: Method = Method.CAUSIL
    agg_fn: str = "mean"
    estimator: EstimatorKind = EstimatorKind.POLY2
    use_domain_knowledge: bool = True
    params: ScoreParams = ScoreParams()
    jobs: int = 1
    max_parents: int | None = None
    caller_agg: str = "sum"
    callee_agg: str = "mean"
    global_search: bool = False

    def __post_init__(self):
        for name in ("agg_fn", "caller_agg", "callee_agg"):
            if getattr(self, name) not in AGG_FUNCTIONS:
                raise ValueError(f"{name} must be one of {AGG_FUNCTIONS}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def label(self) -> str:
        if self.method is Method.CAUSIL:
            name = "CausIL"
        else:
            name = {"mean": "Avg", "max": "Max", "min": "Min", "sum": "Sum"}[self.agg_fn] + "-fGES"
        return f"{name}-{self.estimator.label}"


@dataclass(frozen=True)
class ServiceDatasetSpec:
    service: int
    own: tuple
    adjacent: tuple

    @property
    def columns(self) -> tuple:
        return self.own + self.adjacent


@dataclass
class ServiceResult:
    service: int
    n_rows: int
    seconds: float
    trace: list
    score_evaluations: int
    pdag: Pdag


@dataclass
class DiscoveryResult:
    dag: Dag
    services: list = field(default_factory=list)
    seconds: float = 0.0
    dropped_edges: list = field(default_factory=list)

    def manifest(self) -> dict:
        return {"seconds": self.seconds,
                "services": [{"service": r.service, "n": r.n_rows, "seconds": r.seconds,
                              "score_evaluations": r.score_evaluations,
                              "score_trace": [t["total"] for t in r.trace]} for r in self.services],
                "dropped_edges": [[repr(a), repr(b)] for a, b in self.dropped_edges]}


# ---------------------------------------------------------------------------
# domain knowledge
# ---------------------------------------------------------------------------

def _is_forbidden(a: MetricNode, b: MetricNode, calls: frozenset) -> bool:
    if a == b:
        return False
    if a.service == b.service:
        return b.category == W or (a.category == L and b.category in (UC, UM))
    if a.category == W and b.category == W:
        return (a.service, b.service) not in calls
    if a.category == b.category and a.category in (L, E):
        return (b.service, a.service) not in calls
    return True


def knowledge_for(cg: ServiceCallGraph, nodes) -> Knowledge:
    """The domain knowledge of ``cg`` restricted to ``nodes``."""
    calls = frozenset(cg.edges)
    nodes = list(nodes)
    return Knowledge(frozenset((a, b) for a in nodes for b in nodes if _is_forbidden(a, b, calls)))


def generate_domain_knowledge(cg: ServiceCallGraph) -> Knowledge:
    """Forbidden edges from metric semantics and the call graph.

    Within a service nothing causes workload and latency does not cause
    utilisation. Between services only W(caller)->W(callee),
    L(callee)->L(caller) and E(callee)->E(caller) are allowed, and only
    along call edges.
    """
    return knowledge_for(cg, metric_nodes(cg.n_services))


def interservice_edges(cg: ServiceCallGraph) -> set:
    edges = set()
    for a, b in cg.edges:
        edges.add((MetricNode(a, W), MetricNode(b, W)))
        edges.add((MetricNode(b, L), MetricNode(a, L)))
        edges.add((MetricNode(b, E), MetricNode(a, E)))
    return edges


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def aggregate_instances(panel: MetricPanel, service: int, category, fn: str = "mean") -> np.ndarray:
    """Per-timestamp ``fn`` over the active instances; MissingData on a gap."""
    p = panel.service(service)
    if not p.has(category):
        raise MissingData(f"service {service} has no {category.label} data")
    out = p.aggregate(category, fn)
    if np.isnan(out).any():
        t = int(np.flatnonzero(np.isnan(out))[0])
        raise MissingData(f"service {service} has no active instance at t={t}")
    return out


def _aggregate_lenient(panel: MetricPanel, service: int, category, fn: str) -> np.ndarray:
    p = panel.service(service)
    if not p.has(category):
        raise MissingData(f"service {service} has no {category.label} data")
    return p.aggregate(category, fn)


def dataset_spec(service: int, cg: ServiceCallGraph) -> ServiceDatasetSpec:
    own = tuple(MetricNode(service, c) for c in CATEGORIES)
    adjacent = [MetricNode(c, W) for c in cg.callers(service)]
    for c in cg.callees(service):
        adjacent += [MetricNode(c, L), MetricNode(c, E)]
    return ServiceDatasetSpec(service, own, tuple(adjacent))


def build_service_dataset(panel: MetricPanel, service: int, cg: ServiceCallGraph,
                          cfg: DiscoveryConfig = DiscoveryConfig()) -> StackedDataset:
    """Instance-level rows for ``service`` with neighbour aggregates repeated per t.

    Column labels are the metric nodes themselves. Timestamps where the
    service or a neighbour has no active instance are dropped (logged).
    """
    spec = dataset_spec(service, cg)
    p = panel.service(service)
    adj = []
    for node in spec.adjacent:
        fn = cfg.caller_agg if node.category == W else cfg.callee_agg
        adj.append(_aggregate_lenient(panel, node.service, node.category, fn))
    if cfg.method is Method.AGGREGATED:
        own = [_aggregate_lenient(panel, service, c, cfg.agg_fn) for c in CATEGORIES]
        data = np.column_stack(own + adj)
        groups = np.arange(panel.T)
    else:
        data = np.column_stack([p.values] + [a[p.t] for a in adj]) if adj else np.array(p.values)
        groups = np.asarray(p.t)
    keep = ~np.isnan(data).any(axis=1)
    if not keep.all():
        bad = np.unique(groups[~keep])
        log.info("service %d: dropping %d timestamps without data", service, len(bad))
        drop = np.isin(groups, bad)
        data, groups = data[~drop], groups[~drop]
    if len(data) == 0:
        raise MissingData(f"service {service} has no usable rows")
    return StackedDataset(spec.columns, data, groups)


# ---------------------------------------------------------------------------
# discovery
# ---------------------------------------------------------------------------

def _run_service(panel, cg, service, cfg) -> ServiceResult:
    t0 = time.perf_counter()
    ds = build_service_dataset(panel, service, cg, cfg)
    local = knowledge_for(cg, ds.columns) if cfg.use_domain_knowledge else Knowledge()
    gcfg = GesConfig(estimator=cfg.estimator, params=cfg.params, knowledge=local,
                     max_parents=cfg.max_parents)
    res = fges_search(ds, None, gcfg)
    return ServiceResult(service, ds.n, time.perf_counter() - t0, res.trace, res.score_evaluations, res.pdag)


def _merge(nodes, cg: ServiceCallGraph, results, keep_extra: bool) -> tuple[Pdag, list]:
    """Union of the per-service fragments plus the wired inter-service edges.

    Only service-internal edges of each fragment are kept, unless
    ``keep_extra`` is set, in which case edges between a service and its
    neighbours' aggregated columns are kept as well. Directed edges that
    would close a cycle (or reverse a wired edge) are dropped and reported.
    """
    directed = set(interservice_edges(cg))
    undirected = set()
    dropped = []
    intra, extra = [], []
    for r in results:
        s = r.service
        for a, b in sorted(r.pdag.directed):
            if a.service == s and b.service == s:
                intra.append((a, b))
            elif keep_extra and a.service != b.service and s in (a.service, b.service):
                extra.append((a, b))
        for e in sorted(tuple(sorted(e)) for e in r.pdag.undirected):
            a, b = e
            if (a.service == s and b.service == s) or (
                    keep_extra and a.service != b.service and s in (a.service, b.service)):
                undirected.add(frozenset(e))
    candidates = [e for e in intra + extra if e not in directed and e[::-1] not in directed]
    try:
        _kahn(nodes, directed | set(candidates))
        bulk_ok = True
    except CycleDetected:
        bulk_ok = False
    for a, b in intra + extra:
        pair = frozenset((a, b))
        if (a, b) in directed:
            continue
        if (b, a) in directed:
            dropped.append((a, b))
            continue
        if not bulk_ok:
            try:
                _kahn(nodes, directed | {(a, b)})
            except CycleDetected:
                dropped.append((a, b))
                continue
        directed.add((a, b))
        undirected.discard(pair)
    for a, b in directed:
        undirected.discard(frozenset((a, b)))
    if dropped:
        log.info("merge dropped %d edges that would reverse a wired edge or close a cycle", len(dropped))
    return Pdag(nodes, frozenset(directed), frozenset(undirected)), dropped


def _discover_per_service(panel: MetricPanel, cg: ServiceCallGraph, cfg: DiscoveryConfig) -> DiscoveryResult:
    t0 = time.perf_counter()
    services = list(range(cg.n_services))
    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(lambda s: _run_service(panel, cg, s, cfg), services))
    else:
        results = [_run_service(panel, cg, s, cfg) for s in services]
    nodes = metric_nodes(cg.n_services)
    merged, dropped = _merge(nodes, cg, results, keep_extra=not cfg.use_domain_knowledge)
    knowledge = None
    if cfg.use_domain_knowledge:
        # orientation only consults the still-undirected pairs
        calls = frozenset(cg.edges)
        knowledge = Knowledge(frozenset((a, b) for e in merged.undirected for a, b in (tuple(e), tuple(e)[::-1])
                                        if _is_forbidden(a, b, calls)))
    dag = _orient(merged, knowledge)
    return DiscoveryResult(dag, results, time.perf_counter() - t0, dropped)


def _orient(merged: Pdag, knowledge: Knowledge | None) -> Dag:
    return cpdag_to_dag(merged, knowledge)


def discover_causil(panel: MetricPanel, cg: ServiceCallGraph,
                    cfg: DiscoveryConfig = DiscoveryConfig()) -> DiscoveryResult:
    if cfg.method is not Method.CAUSIL:
        raise ValueError("discover_causil needs method=CAUSIL")
    return _discover_per_service(panel, cg, cfg)


def discover_aggregated(panel: MetricPanel, cg: ServiceCallGraph,
                        cfg: DiscoveryConfig = DiscoveryConfig(method=Method.AGGREGATED)) -> DiscoveryResult:
    if cfg.method is not Method.AGGREGATED:
        raise ValueError("discover_aggregated needs method=AGGREGATED")
    if cfg.global_search:
        return _discover_global(panel, cg, cfg)
    return _discover_per_service(panel, cg, cfg)


def _discover_global(panel, cg, cfg) -> DiscoveryResult:
    """One joint search over every service's aggregated metrics."""
    t0 = time.perf_counter()
    nodes = metric_nodes(cg.n_services)
    cols = [_aggregate_lenient(panel, v.service, v.category, cfg.agg_fn) for v in nodes]
    data = np.column_stack(cols)
    keep = ~np.isnan(data).any(axis=1)
    ds = StackedDataset(nodes, data[keep], np.flatnonzero(keep))
    knowledge = generate_domain_knowledge(cg) if cfg.use_domain_knowledge else Knowledge()
    gcfg = GesConfig(estimator=cfg.estimator, params=cfg.params, knowledge=knowledge,
                     max_parents=cfg.max_parents, jobs=cfg.jobs)
    res = fges_search(ds, None, gcfg)
    dag = _orient(res.pdag, knowledge if cfg.use_domain_knowledge else None)
    sr = ServiceResult(-1, ds.n, time.perf_counter() - t0, res.trace, res.score_evaluations, res.pdag)
    return DiscoveryResult(dag, [sr], time.perf_counter() - t0, [])


def discover(panel: MetricPanel, cg: ServiceCallGraph, cfg: DiscoveryConfig) -> DiscoveryResult:
    if cfg.method is Method.CAUSIL:
        return discover_causil(panel, cg, cfg)
    return discover_aggregated(panel, cg, cfg)
