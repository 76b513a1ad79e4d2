"""Random call graphs, ground-truth metric graphs and instance-level panels.

Synthetic panels simulate a load balancer and an auto-scaler: every service
has an aggregate workload per timestamp, the auto-scaler turns it into an
instance count, the balancer splits it over the instances, and the other
four metrics are produced per instance by shared quadratic mechanisms plus
Gaussian noise. Latency and error additionally depend on the per-timestamp
mean latency / error of the services a service calls, so callees are
simulated before their callers.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import CyclicTemplate, InsufficientData, InvalidConfig, MissingData
from .graph import (E, L, UC, UM, W, Dag, MetricCategory, MetricNode, ServiceCallGraph, _kahn,
                    metric_nodes)

log = logging.getLogger(__name__)

CATEGORIES = tuple(MetricCategory)
DEFAULT_TEMPLATE = ((W, UC), (W, UM), (UC, L), (UM, L), (UC, E), (UM, E), (E, L))

# output placement of each mechanism: value = base + scale * g(z)
_OUTPUT_SHAPE = {UC: (30.0, 8.0), UM: (30.0, 8.0), L: (60.0, 10.0), E: (10.0, 2.0)}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExogenousSpec:
    """Aggregate workload of services nobody calls.

    ``kind`` is ``sinusoid`` (mean + amplitude * sin(2 pi t / period) plus
    Gaussian noise of sd ``noise * mean``), ``constant`` or ``lognormal``
    (i.i.d. draws with the given mean and coefficient of variation ``noise``).
    """

    kind: str = "sinusoid"
    mean: float = 2000.0
    amplitude: float = 1000.0
    period: float = 96.0
    noise: float = 0.1

    def __post_init__(self):
        if self.kind not in ("sinusoid", "constant", "lognormal"):
            raise InvalidConfig(f"unknown exogenous workload kind {self.kind!r}")
        if self.mean < 0 or self.amplitude < 0 or self.noise < 0 or self.period <= 0:
            raise InvalidConfig("exogenous workload parameters must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    n_services: int = 10
    n_call_edges: int | None = None
    call_edges: tuple | None = None
    T: int = 2000
    instance_capacity: float = 100.0
    min_instances: int = 1
    max_instances: int = 50
    exogenous: ExogenousSpec = ExogenousSpec()
    noise_frac: float = 0.05
    linear_coef: tuple = (0.5, 1.0)
    quad_coef: tuple = (0.3, 0.7)
    beta_range: tuple = (0.5, 1.0)
    template: tuple = DEFAULT_TEMPLATE
    seed: int = 0

    def __post_init__(self):
        tpl = tuple((MetricCategory.parse(a) if isinstance(a, str) else MetricCategory(a),
                     MetricCategory.parse(b) if isinstance(b, str) else MetricCategory(b))
                    for a, b in self.template)
        object.__setattr__(self, "template", tpl)
        if isinstance(self.exogenous, dict):
            object.__setattr__(self, "exogenous", ExogenousSpec(**self.exogenous))
        for name in ("linear_coef", "quad_coef", "beta_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if lo > hi:
                raise InvalidConfig(f"{name}: lower bound exceeds upper bound")
            object.__setattr__(self, name, (lo, hi))
        if self.call_edges is not None:
            object.__setattr__(self, "call_edges", tuple(tuple(int(v) for v in e) for e in self.call_edges))
        n = self.n_services
        if n < 1:
            raise InvalidConfig("n_services must be >= 1")
        if self.T < 1:
            raise InvalidConfig("T must be >= 1")
        if self.n_call_edges is not None and self.call_edges is None:
            if not n - 1 <= self.n_call_edges <= n * (n - 1) // 2:
                raise InvalidConfig("n_call_edges must lie in [n_services-1, n(n-1)/2]")
        if not 1 <= self.min_instances <= self.max_instances:
            raise InvalidConfig("need 1 <= min_instances <= max_instances")
        if self.instance_capacity <= 0:
            raise InvalidConfig("instance_capacity must be positive")
        if self.noise_frac < 0:
            raise InvalidConfig("noise_frac must be non-negative")
        if not (0.0 <= self.beta_range[0] and self.beta_range[1] <= 1.0):
            raise InvalidConfig("beta_range must lie in [0, 1]")
        if any(b == W for _, b in tpl):
            raise InvalidConfig("template edges into workload are not supported")

    @property
    def edge_budget(self) -> int:
        n = self.n_services
        if self.n_call_edges is not None:
            return self.n_call_edges
        return min(n + n // 2, n * (n - 1) // 2)

    def to_json(self) -> dict:
        d = asdict(self)
        d["template"] = [[a.short, b.short] for a, b in self.template]
        d["linear_coef"] = list(self.linear_coef)
        d["quad_coef"] = list(self.quad_coef)
        d["beta_range"] = list(self.beta_range)
        if self.call_edges is not None:
            d["call_edges"] = [list(e) for e in self.call_edges]
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise InvalidConfig(f"unknown SimConfig keys: {sorted(unknown)}")
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from exc

    def digest(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# panel
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ServicePanel:
    """Rows of one service sorted by (t, instance). ``values`` has one
    column per :class:`MetricCategory` (NaN where a metric was not observed)."""

    t: np.ndarray
    instance: np.ndarray
    values: np.ndarray
    T: int

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        inst = np.asarray(self.instance, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64).reshape(len(t), len(CATEGORIES))
        order = np.lexsort((inst, t))
        if not (order == np.arange(len(t))).all():
            t, inst, vals = t[order], inst[order], vals[order]
        if len(t) and (t.min() < 0 or t.max() >= self.T):
            raise InvalidConfig("timestamp outside [0, T)")
        for a in (t, inst, vals):
            a.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "instance", inst)
        object.__setattr__(self, "values", vals)

    @property
    def offsets(self) -> np.ndarray:
        return np.searchsorted(self.t, np.arange(self.T + 1)).astype(np.int64)

    @property
    def counts(self) -> np.ndarray:
        """Active instance count R_t."""
        return np.diff(self.offsets)

    def column(self, category: MetricCategory) -> np.ndarray:
        return self.values[:, int(category)]

    def has(self, category: MetricCategory) -> bool:
        return len(self.t) > 0 and not np.isnan(self.column(category)).all()

    def aggregate(self, category: MetricCategory, fn: str = "mean") -> np.ndarray:
        """Per-timestamp reduction over the active instances (NaN where R_t=0)."""
        col = np.ascontiguousarray(self.column(category))
        return kernels.segment_reduce(col, self.offsets, kernels.AGG_CODES[fn])


@dataclass(frozen=True, eq=False)
class MetricPanel:
    T: int
    services: dict

    @property
    def n_services(self) -> int:
        return len(self.services)

    def service(self, s: int) -> ServicePanel:
        try:
            return self.services[s]
        except KeyError:
            raise MissingData(f"panel has no data for service {s}") from None

    def counts(self, s: int) -> np.ndarray:
        return self.service(s).counts

    def n_records(self) -> int:
        return sum(int((~np.isnan(p.values)).sum()) for p in self.services.values())

    def to_frame(self):
        import pandas as pd

        parts = []
        for s in sorted(self.services):
            p = self.services[s]
            for c in CATEGORIES:
                v = p.column(c)
                keep = ~np.isnan(v)
                parts.append(pd.DataFrame({"service": s, "category": c.short,
                                           "instance": p.instance[keep], "t": p.t[keep], "value": v[keep]}))
        df = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(
            columns=["service", "category", "instance", "t", "value"])
        return df.sort_values(["service", "t", "instance", "category"], kind="mergesort",
                              key=lambda col: col.map(_CAT_RANK) if col.name == "category" else col)

    @classmethod
    def from_frame(cls, df, T: int | None = None) -> "MetricPanel":
        need = {"service", "category", "instance", "t", "value"}
        if not need <= set(df.columns):
            raise InvalidConfig(f"panel needs columns {sorted(need)}")
        df = df.copy()
        try:
            df["cat"] = df["category"].map(lambda c: int(MetricCategory.parse(str(c))))
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
        T = int(df["t"].max()) + 1 if T is None else T
        services = {}
        for s, g in df.groupby("service", sort=True):
            wide = g.pivot_table(index=["t", "instance"], columns="cat", values="value", aggfunc="first")
            wide = wide.reindex(columns=range(len(CATEGORIES)))
            idx = wide.index.to_frame(index=False)
            services[int(s)] = ServicePanel(idx["t"].to_numpy(), idx["instance"].to_numpy(),
                                            wide.to_numpy(dtype=np.float64), T)
        return cls(T, services)

    def write_csv(self, path) -> None:
        df = self.to_frame()
        df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def read_csv(cls, path, T: int | None = None) -> "MetricPanel":
        import pandas as pd

        try:
            df = pd.read_csv(path, float_precision="round_trip")
        except (OSError, ValueError) as exc:
            raise InvalidConfig(f"cannot read panel {path}: {exc}") from exc
        return cls.from_frame(df, T)


_CAT_RANK = {c.short: int(c) for c in CATEGORIES}


# ---------------------------------------------------------------------------
# mechanisms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticMechanism:
    """``base + scale * (a0 + sum a z + sum b z^2)`` on standardised parents."""

    parents: tuple
    center: np.ndarray
    spread: np.ndarray
    a0: float
    a: np.ndarray
    b: np.ndarray
    base: float
    scale: float
    sigma: float = 0.0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(self.parents))
        z = (X - self.center) / self.spread
        return self.base + self.scale * (self.a0 + z @ self.a + (z * z) @ self.b)

    def to_json(self) -> dict:
        return {"kind": "quadratic", "parents": [repr(p) for p in self.parents],
                "center": self.center.tolist(), "spread": self.spread.tolist(), "a0": self.a0,
                "a": self.a.tolist(), "b": self.b.tolist(), "base": self.base, "scale": self.scale,
                "sigma": self.sigma}


@dataclass(frozen=True)
class ForestMechanism:
    """Random-forest regressor learnt from a real panel, shared by all services."""

    features: tuple
    model: object
    sigma: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(self.features))
        return self.model.predict(X)

    def to_json(self) -> dict:
        return {"kind": "forest", "features": list(self.features), "sigma": self.sigma,
                "n_estimators": getattr(self.model, "n_estimators", None)}


@dataclass(frozen=True)
class FunctionSet:
    """Mechanisms per target and the auto-scaler.

    Synthetic sets key ``mechanisms`` by :class:`MetricNode`; semi-synthetic
    sets key them by :class:`MetricCategory`, the same learnt function being
    used for every service. ``autoscaler`` is None for the clamp rule.
    """

    mechanisms: dict
    autoscaler: object = None
    exogenous: np.ndarray | None = None

    def mechanism(self, node: MetricNode):
        return self.mechanisms.get(node) or self.mechanisms[node.category]

    def to_json(self) -> dict:
        return {"mechanisms": {repr(k): m.to_json() for k, m in sorted(self.mechanisms.items())},
                "autoscaler": "clamp" if self.autoscaler is None else "isotonic"}


@dataclass(frozen=True)
class GroundTruthBundle:
    call_graph: ServiceCallGraph
    metric_dag: Dag
    functions: FunctionSet
    beta: dict
    workload: dict = field(default_factory=dict)  # service -> W^agg series

    def to_json(self) -> dict:
        from .graph import graph_to_json

        return {"call_graph": self.call_graph.to_json(), "metric_dag": graph_to_json(self.metric_dag),
                "beta": [[a, b, v] for (a, b), v in sorted(self.beta.items())]}


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

def generate_random_call_graph(n_nodes: int, n_edges: int, seed) -> ServiceCallGraph:
    """Random DAG where every service except 0 calls a lower-numbered one.

    Services are 0-based: service ``i >= 1`` first calls a uniformly chosen
    ``j < i`` (so the graph is connected); then ``n_edges - n_nodes + 1``
    further ``(i, j)`` draws are made, duplicates being skipped.
    """
    if n_nodes < 1:
        raise InvalidConfig("n_nodes must be >= 1")
    if not n_nodes - 1 <= n_edges <= n_nodes * (n_nodes - 1) // 2:
        raise InvalidConfig("n_edges must lie in [n_nodes-1, n_nodes(n_nodes-1)/2]")
    rng = np.random.default_rng(seed)
    edges = []
    seen = set()
    for i in range(1, n_nodes):
        j = int(rng.integers(0, i))
        edges.append((i, j))
        seen.add((i, j))
    for _ in range(n_edges - n_nodes + 1):
        i = int(rng.integers(1, n_nodes))
        j = int(rng.integers(0, i))
        if (i, j) not in seen:
            seen.add((i, j))
            edges.append((i, j))
    return ServiceCallGraph(n_nodes, frozenset(edges))


def build_ground_truth_metric_graph(cg: ServiceCallGraph, template=DEFAULT_TEMPLATE) -> Dag:
    tpl = [(MetricCategory(a), MetricCategory(b)) for a, b in template]
    try:
        _kahn(CATEGORIES, tpl)
    except Exception:
        raise CyclicTemplate("intra-service template has a cycle") from None
    edges = set()
    for s in range(cg.n_services):
        for a, b in tpl:
            edges.add((MetricNode(s, a), MetricNode(s, b)))
    for a, b in cg.edges:
        edges.add((MetricNode(a, W), MetricNode(b, W)))
        edges.add((MetricNode(b, L), MetricNode(a, L)))
        edges.add((MetricNode(b, E), MetricNode(a, E)))
    dag = Dag(metric_nodes(cg.n_services), frozenset(edges))
    if not dag.is_acyclic():  # pragma: no cover - guaranteed by construction
        raise CyclicTemplate("template combined with call edges is cyclic")
    return dag


# ---------------------------------------------------------------------------
# load balancer and auto-scaler
# ---------------------------------------------------------------------------

def autoscale(w_agg, cfg: SimConfig):
    """``clamp(ceil(w / capacity), min, max)``; accepts scalars or arrays."""
    w = np.asarray(w_agg, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("workload must be non-negative")
    r = np.clip(np.ceil(w / cfg.instance_capacity), cfg.min_instances, cfg.max_instances).astype(np.int64)
    return int(r) if r.ndim == 0 else r


def distribute_load(w_agg: float, r: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``r`` per-instance loads from N(w/r, w/(10 r)) truncated at 0."""
    if r < 1:
        raise ValueError("r must be >= 1")
    if w_agg < 0:
        raise ValueError("workload must be non-negative")
    mu = w_agg / r
    return np.maximum(rng.normal(mu, mu / 10.0, size=r), 0.0)


def _distribute_all(w_agg: np.ndarray, counts: np.ndarray, rng) -> np.ndarray:
    mu = np.repeat(w_agg / counts, counts)
    return np.maximum(rng.normal(mu, mu / 10.0), 0.0)


def _instance_ids(counts: np.ndarray) -> np.ndarray:
    """Stable ids: growth appends fresh ids, shrinkage retires the highest."""
    active: list[int] = []
    nxt = 0
    out = np.empty(int(counts.sum()), dtype=np.int64)
    pos = 0
    for r in counts:
        while len(active) < r:
            active.append(nxt)
            nxt += 1
        del active[r:]
        out[pos:pos + r] = active
        pos += r
    return out


def exogenous_series(spec: ExogenousSpec, T: int, rng) -> np.ndarray:
    t = np.arange(T)
    if spec.kind == "constant":
        x = np.full(T, spec.mean)
    elif spec.kind == "sinusoid":
        x = spec.mean + spec.amplitude * np.sin(2 * np.pi * t / spec.period)
        x = x + rng.normal(0.0, spec.noise * spec.mean, size=T)
    else:
        cv = max(spec.noise, 1e-12)
        s2 = math.log1p(cv * cv)
        x = rng.lognormal(math.log(max(spec.mean, 1e-300)) - s2 / 2, math.sqrt(s2), size=T)
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def _clamp(cat: MetricCategory, v: np.ndarray) -> np.ndarray:
    if cat in (UC, UM):
        return np.clip(v, 0.0, 100.0)
    return np.maximum(v, 0.0)


@dataclass
class _Sim:
    cfg: SimConfig
    cg: ServiceCallGraph
    rng: np.random.Generator
    w_agg: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)  # service -> (N, 5)
    groups: dict = field(default_factory=dict)  # service -> row -> t
    agg_mean: dict = field(default_factory=dict)  # (service, cat) -> (T,)

    def parents_of(self, s: int, cat: MetricCategory) -> list:
        """Parent nodes of (s, cat) in ground-truth order: template, then callees."""
        ps = [MetricNode(s, a) for a, b in self.cfg.template if b == cat]
        if cat in (L, E):
            ps += [MetricNode(c, cat) for c in self.cg.callees(s)]
        return ps

    def parent_matrix(self, s: int, parents: list) -> np.ndarray:
        cols = []
        for p in parents:
            if p.service == s:
                cols.append(self.values[s][:, int(p.category)])
            else:
                cols.append(self.agg_mean[(p.service, p.category)][self.groups[s]])
        return np.column_stack(cols) if cols else np.empty((len(self.groups[s]), 0))


def _category_order(template) -> list:
    return [c for c in _kahn(CATEGORIES, template) if c != W]


def _draw_quadratic(rng, cfg: SimConfig, node: MetricNode, parents: list, X: np.ndarray) -> QuadraticMechanism:
    k = len(parents)
    a0 = float(rng.uniform(-0.5, 0.5))
    a = rng.uniform(*cfg.linear_coef, size=k)
    b = rng.uniform(*cfg.quad_coef, size=k)
    center = X.mean(axis=0) if k else np.zeros(0)
    spread = X.std(axis=0) if k else np.zeros(0)
    spread = np.where(spread > 0, spread, 1.0)
    base, scale = _OUTPUT_SHAPE.get(node.category, (10.0, 2.0))
    return QuadraticMechanism(tuple(parents), center, spread, a0, a, b, base, scale)


def generate_synthetic(cfg: SimConfig, functions: FunctionSet | None = None,
                       call_graph: ServiceCallGraph | None = None) -> tuple[MetricPanel, GroundTruthBundle]:
    """Simulate a panel.

    With ``functions`` given (e.g. from :func:`fit_semi_synthetic_functions`)
    their mechanisms, auto-scaler and exogenous series are used instead of
    freshly drawn quadratics (semi-synthetic mode).
    """
    rng = np.random.default_rng(cfg.seed)
    if call_graph is None:
        if cfg.call_edges is not None:
            call_graph = ServiceCallGraph(cfg.n_services, frozenset(cfg.call_edges))
        else:
            call_graph = generate_random_call_graph(cfg.n_services, cfg.edge_budget, rng)
    elif call_graph.n_services != cfg.n_services:
        raise InvalidConfig("call graph size differs from n_services")
    cg = call_graph
    truth = build_ground_truth_metric_graph(cg, cfg.template)
    beta = {e: float(rng.uniform(*cfg.beta_range)) for e in sorted(cg.edges)}
    sim = _Sim(cfg, cg, rng)
    T = cfg.T

    # workload, callers first
    exo = None if functions is None else functions.exogenous
    exo_services = cg.exogenous()
    for s in cg.caller_first_order():
        if s in exo_services:
            if exo is None:
                w = exogenous_series(cfg.exogenous, T, rng)
            else:
                series = np.atleast_2d(exo)
                w = np.resize(series[exo_services.index(s) % len(series)], T).astype(np.float64)
        else:
            w = np.zeros(T)
            for c in cg.callers(s):
                w = w + beta[(c, s)] * sim.w_agg[c]
        sim.w_agg[s] = w
        if functions is not None and functions.autoscaler is not None:
            r = np.clip(np.rint(functions.autoscaler.predict(w)), cfg.min_instances, cfg.max_instances)
            r = r.astype(np.int64)
        else:
            r = autoscale(w, cfg)
        sim.counts[s] = r
        vals = np.full((int(r.sum()), len(CATEGORIES)), np.nan)
        vals[:, int(W)] = _distribute_all(w, r, rng)
        sim.values[s] = vals
        sim.groups[s] = np.repeat(np.arange(T), r)

    # remaining metrics, callees first
    order = _category_order(cfg.template)
    mechanisms = {}
    for s in reversed(cg.caller_first_order()):
        vals = sim.values[s]
        for cat in order:
            node = MetricNode(s, cat)
            parents = sim.parents_of(s, cat)
            X = sim.parent_matrix(s, parents)
            if functions is None:
                mech = _draw_quadratic(rng, cfg, node, parents, X)
                clean = mech.predict(X)
                mech = replace(mech, sigma=float(cfg.noise_frac * clean.std()))
            else:
                mech = functions.mechanism(node)
                clean = mech.predict(_semi_features(sim, s, cat, mech))
            mechanisms[node] = mech
            noisy = clean + rng.normal(0.0, 1.0, size=len(clean)) * mech.sigma
            vals[:, int(cat)] = _clamp(cat, noisy)
            if cat in (L, E):
                off = np.concatenate([[0], np.cumsum(sim.counts[s])]).astype(np.int64)
                sim.agg_mean[(s, cat)] = kernels.segment_reduce(
                    np.ascontiguousarray(vals[:, int(cat)]), off, kernels.MEAN)

    services = {}
    for s in range(cg.n_services):
        r = sim.counts[s]
        services[s] = ServicePanel(sim.groups[s], _instance_ids(r), sim.values[s], T)
    fs = FunctionSet(mechanisms if functions is None else dict(functions.mechanisms),
                     None if functions is None else functions.autoscaler,
                     None if functions is None else functions.exogenous)
    return MetricPanel(T, services), GroundTruthBundle(cg, truth, fs, beta, dict(sim.w_agg))


# ---------------------------------------------------------------------------
# semi-synthetic functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SemiSyntheticOptions:
    n_estimators: int = 50
    max_depth: int | None = 12
    min_samples_leaf: int = 5
    min_rows: int = 50
    seed: int = 0


def _feature_names(template, cat: MetricCategory) -> tuple:
    intra = tuple(a.short for a, b in template if b == cat)
    return intra + (("callees",) if cat in (L, E) else ())


def _semi_features(sim: _Sim, s: int, cat: MetricCategory, mech: ForestMechanism) -> np.ndarray:
    n = len(sim.groups[s])
    cols = []
    for f in mech.features:
        if f == "callees":
            acc = np.zeros(n)
            for c in sim.cg.callees(s):
                acc = acc + sim.agg_mean[(c, cat)][sim.groups[s]]
            cols.append(acc)
        else:
            cols.append(sim.values[s][:, int(MetricCategory.parse(f))])
    return np.column_stack(cols)


def fit_semi_synthetic_functions(real_panel: MetricPanel, truth_edges: Dag,
                                 opts: SemiSyntheticOptions = SemiSyntheticOptions()) -> FunctionSet:
    """Learn one forest per metric category from a real panel.

    The intra-service parents of each category are read off ``truth_edges``
    (pooled over services); latency and error get one extra feature, the sum
    over called services of their per-timestamp mean of the same metric.
    Noise scales are out-of-bag residual standard deviations. The auto-scaler
    is an isotonic fit of instance count on aggregate workload, and the
    aggregate workload of the real panel's entry services is kept for replay.
    """
    from sklearn.ensemble import RandomForestRegressor
    from sklearn.isotonic import IsotonicRegression

    services = sorted({v.service for v in truth_edges.nodes})
    template = sorted({(a.category, b.category) for a, b in truth_edges.edges if a.service == b.service})
    callees = {s: sorted({a.service for a, b in truth_edges.edges
                          if b.service == s and a.service != s and b.category in (L, E)}) for s in services}
    callers = {s: {a.service for a, b in truth_edges.edges if b.service == s and a.service != s and b.category == W}
               for s in services}
    for s in services:
        if s not in real_panel.services:
            raise InsufficientData(f"real panel has no rows for service {s}")

    agg = {}
    for s in services:
        p = real_panel.services[s]
        for cat in (L, E):
            if p.has(cat):
                agg[(s, cat)] = p.aggregate(cat, "mean")

    mechanisms = {}
    for cat in _category_order(template):
        feats = _feature_names(template, cat)
        Xs, ys = [], []
        for s in services:
            p = real_panel.services[s]
            need = [MetricCategory.parse(f) for f in feats if f != "callees"] + [cat]
            if any(not p.has(c) for c in need):
                raise InsufficientData(f"service {s} lacks a metric needed to learn {cat.label}")
            cols = [p.column(MetricCategory.parse(f)) if f != "callees" else None for f in feats]
            if "callees" in feats:
                acc = np.zeros(len(p.t))
                for c in callees[s]:
                    if (c, cat) not in agg:
                        raise InsufficientData(f"service {c} lacks {cat.label} needed by service {s}")
                    acc = acc + agg[(c, cat)][p.t]
                cols[-1] = acc
            X = np.column_stack(cols) if cols else np.zeros((len(p.t), 0))
            y = p.column(cat)
            ok = ~np.isnan(y) & ~np.isnan(X).any(axis=1)
            Xs.append(X[ok])
            ys.append(y[ok])
        X = np.concatenate(Xs)
        y = np.concatenate(ys)
        if len(y) < opts.min_rows:
            raise InsufficientData(f"{len(y)} rows to learn {cat.label}, need {opts.min_rows}")
        if X.shape[1] == 0:
            X = np.zeros((len(y), 1))
        model = RandomForestRegressor(n_estimators=opts.n_estimators, max_depth=opts.max_depth,
                                      min_samples_leaf=opts.min_samples_leaf, oob_score=True,
                                      random_state=opts.seed, n_jobs=1)
        model.fit(X, y)
        resid = y - model.oob_prediction_
        sigma = float(np.nanstd(resid))
        mechanisms[cat] = ForestMechanism(feats, model, sigma)

    # auto-scaler on aggregate workload
    ws, rs = [], []
    for s in services:
        p = real_panel.services[s]
        if not p.has(W):
            raise InsufficientData(f"service {s} lacks workload")
        cnt = p.counts
        keep = cnt > 0
        ws.append(p.aggregate(W, "sum")[keep])
        rs.append(cnt[keep].astype(np.float64))
    f0 = IsotonicRegression(increasing=True, out_of_bounds="clip").fit(np.concatenate(ws), np.concatenate(rs))

    entry = [s for s in services if not callers[s]]
    exo = np.vstack([np.nan_to_num(real_panel.services[s].aggregate(W, "sum")) for s in entry])
    return FunctionSet(mechanisms, f0, exo)


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def load_sim_config(path) -> SimConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidConfig("config must be a JSON object")
    return SimConfig.from_json(obj)
