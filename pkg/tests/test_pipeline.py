import itertools
import logging

import numpy as np
import pytest

from causil.datagen import CATEGORIES, MetricPanel, ServicePanel, SimConfig, generate_synthetic
from causil.errors import MissingData
from causil.graph import E, L, UC, UM, W, MetricNode, ServiceCallGraph, metric_nodes
from causil.pipeline import (DiscoveryConfig, Method, aggregate_instances, build_service_dataset,
                            dataset_spec, discover, discover_aggregated, discover_causil,
                            generate_domain_knowledge, knowledge_for)
from causil.score import EstimatorKind

N = MetricNode
LIN = EstimatorKind.LINEAR


def panel_from(rows_per_t, values_fn, n_services=1, T=None):
    """Hand-built panel: ``rows_per_t[s][t]`` instances, values from ``values_fn(s, t, j)``."""
    services = {}
    T = T or len(rows_per_t[0])
    for s in range(n_services):
        t, inst, vals = [], [], []
        for tt, r in enumerate(rows_per_t[s]):
            for j in range(r):
                t.append(tt)
                inst.append(j)
                vals.append(values_fn(s, tt, j))
        services[s] = ServicePanel(np.array(t), np.array(inst), np.array(vals, dtype=float).reshape(-1, 5), T)
    return MetricPanel(T, services)


# -- domain knowledge -------------------------------------------------------

def test_dk_single_service():
    k = generate_domain_knowledge(ServiceCallGraph(1, frozenset()))
    s = lambda c: N(0, c)
    assert k.forbidden == {(s(UC), s(W)), (s(UM), s(W)), (s(L), s(W)), (s(E), s(W)),
                           (s(L), s(UC)), (s(L), s(UM))}


def test_dk_unconnected_pair():
    k = generate_domain_knowledge(ServiceCallGraph(2, frozenset()))
    inter = [e for e in k.forbidden if e[0].service != e[1].service]
    assert len(inter) == 50


def test_dk_connected_pair_allows_exactly_three():
    k = generate_domain_knowledge(ServiceCallGraph(2, {(0, 1)}))
    allowed = {(a, b) for a, b in itertools.permutations(metric_nodes(2), 2)
               if a.service != b.service and not k.is_forbidden(a, b)}
    assert allowed == {(N(0, W), N(1, W)), (N(1, L), N(0, L)), (N(1, E), N(0, E))}


def test_dk_is_not_symmetric():
    k = generate_domain_knowledge(ServiceCallGraph(1, frozenset()))
    assert not k.is_forbidden(N(0, W), N(0, UC))


def test_local_knowledge_matches_restriction():
    cg = ServiceCallGraph(4, {(1, 0), (2, 0), (3, 1), (3, 2)})
    full = generate_domain_knowledge(cg)
    for s in range(4):
        cols = dataset_spec(s, cg).columns
        assert knowledge_for(cg, cols) == full.restrict(cols)


# -- aggregation ------------------------------------------------------------

def test_aggregate_arithmetic():
    panel = panel_from([[2]], lambda s, t, j: [2.0 + 2 * j] * 5)
    got = {fn: aggregate_instances(panel, 0, W, fn)[0] for fn in ("mean", "max", "min", "sum")}
    assert got == {"mean": 3.0, "max": 4.0, "min": 2.0, "sum": 6.0}


def test_aggregate_singleton_is_identity():
    panel = panel_from([[1, 1, 1]], lambda s, t, j: [t * 1.5 + c for c in range(5)])
    for fn in ("mean", "max", "min", "sum"):
        assert aggregate_instances(panel, 0, UM, fn).tolist() == [2.0, 3.5, 5.0]


def test_aggregate_mean_matches_loop():
    panel, _ = generate_synthetic(SimConfig(n_services=2, T=60, seed=4))
    p = panel.service(1)
    want = []
    for t in range(60):
        vals = [p.values[i, int(L)] for i in range(len(p.t)) if p.t[i] == t]
        want.append(sum(vals) / len(vals))
    assert np.allclose(aggregate_instances(panel, 1, L, "mean"), want, rtol=1e-12)


def test_aggregate_gap_raises():
    panel = panel_from([[1, 0, 1]], lambda s, t, j: [1.0] * 5)
    with pytest.raises(MissingData):
        aggregate_instances(panel, 0, W)


# -- datasets ---------------------------------------------------------------

def test_dataset_row_count_is_sum_of_instances():
    panel = panel_from([[2, 3]], lambda s, t, j: np.random.default_rng(t * 10 + j).normal(size=5))
    ds = build_service_dataset(panel, 0, ServiceCallGraph(1, frozenset()))
    assert ds.n == 5
    assert ds.columns == tuple(N(0, c) for c in CATEGORIES)


def test_dataset_adjacent_columns_and_constancy():
    panel, gt = generate_synthetic(SimConfig(n_services=4, call_edges=((0, 1), (1, 2), (3, 1)), T=80, seed=2))
    cg = gt.call_graph
    ds = build_service_dataset(panel, 1, cg)
    assert ds.columns == tuple(N(1, c) for c in CATEGORIES) + (N(0, W), N(3, W), N(2, L), N(2, E))
    for j in range(5, 9):
        col = ds.data[:, j]
        for t in np.unique(ds.groups):
            assert np.ptp(col[ds.groups == t]) == 0
    # callers are summed, callees averaged
    assert np.allclose(ds.data[ds.groups == 7, 5][0], panel.service(0).aggregate(W, "sum")[7])
    assert np.allclose(ds.data[ds.groups == 7, 7][0], panel.service(2).aggregate(L, "mean")[7])


def test_aggregated_dataset_has_one_row_per_t():
    panel, gt = generate_synthetic(SimConfig(n_services=2, T=70, seed=0))
    ds = build_service_dataset(panel, 0, gt.call_graph, DiscoveryConfig(method=Method.AGGREGATED))
    assert ds.n == 70


def test_singleton_panels_give_identical_datasets():
    cfg = SimConfig(n_services=3, T=120, min_instances=1, max_instances=1, seed=6)
    panel, gt = generate_synthetic(cfg)
    for s in range(3):
        a = build_service_dataset(panel, s, gt.call_graph, DiscoveryConfig())
        b = build_service_dataset(panel, s, gt.call_graph, DiscoveryConfig(method=Method.AGGREGATED))
        assert a.columns == b.columns
        assert np.array_equal(a.data, b.data)


def test_missing_timestamps_are_dropped(caplog):
    rows = [[2, 0, 2, 2] * 15]
    rng = np.random.default_rng(0)
    panel = panel_from(rows, lambda s, t, j: rng.normal(size=5) + 10)
    with caplog.at_level(logging.INFO, logger="causil.pipeline"):
        ds = build_service_dataset(panel, 0, ServiceCallGraph(1, frozenset()),
                                   DiscoveryConfig(method=Method.AGGREGATED))
    assert ds.n == 45
    assert "dropping" in caplog.text


# -- discovery --------------------------------------------------------------

@pytest.fixture(scope="module")
def small_run():
    panel, gt = generate_synthetic(SimConfig(n_services=3, call_edges=((0, 1), (0, 2)), T=300, seed=1))
    return panel, gt


def test_causil_output_properties(small_run):
    panel, gt = small_run
    res = discover_causil(panel, gt.call_graph, DiscoveryConfig())
    dag = res.dag
    assert dag.nodes == metric_nodes(3)
    assert dag.is_acyclic()
    k = generate_domain_knowledge(gt.call_graph)
    assert not (dag.edges & k.forbidden)
    for a, b in gt.call_graph.edges:
        assert {(N(a, W), N(b, W)), (N(b, L), N(a, L)), (N(b, E), N(a, E))} <= dag.edges
    assert [r.n_rows for r in res.services] == [int(panel.counts(s).sum()) for s in range(3)]


def test_discovery_is_reproducible(small_run):
    panel, gt = small_run
    a = discover(panel, gt.call_graph, DiscoveryConfig())
    b = discover(panel, gt.call_graph, DiscoveryConfig(jobs=3))
    assert a.dag == b.dag


def test_no_dk_output_is_acyclic(small_run):
    panel, gt = small_run
    res = discover(panel, gt.call_graph, DiscoveryConfig(use_domain_knowledge=False, estimator=LIN))
    assert res.dag.is_acyclic()


def test_aggregated_manifest_counts_rows_per_t(small_run):
    panel, gt = small_run
    res = discover_aggregated(panel, gt.call_graph, DiscoveryConfig(method=Method.AGGREGATED))
    assert [s["n"] for s in res.manifest()["services"]] == [300, 300, 300]
    assert res.dag.is_acyclic()


def test_global_aggregated_search(small_run):
    panel, gt = small_run
    res = discover(panel, gt.call_graph, DiscoveryConfig(method=Method.AGGREGATED, global_search=True))
    assert res.dag.nodes == metric_nodes(3)
    assert not (res.dag.edges & generate_domain_knowledge(gt.call_graph).forbidden)


@pytest.mark.parametrize("seed", range(3))
def test_sum_and_mean_agree_at_constant_instance_count(seed):
    cfg = SimConfig(n_services=3, T=300, min_instances=3, max_instances=3, seed=seed)
    panel, gt = generate_synthetic(cfg)
    mk = lambda fn: DiscoveryConfig(method=Method.AGGREGATED, agg_fn=fn, estimator=LIN)
    a = discover(panel, gt.call_graph, mk("sum")).dag
    b = discover(panel, gt.call_graph, mk("mean")).dag
    assert a == b


def test_column_scaling_invariance():
    panel, gt = generate_synthetic(SimConfig(n_services=2, T=200, seed=3))
    scale = np.array([3.0, 0.5, 7.0, 2.0, 0.1])
    scaled = MetricPanel(panel.T, {s: ServicePanel(p.t, p.instance, p.values * scale, panel.T)
                                   for s, p in panel.services.items()})
    cfg = DiscoveryConfig(estimator=LIN)
    assert discover(panel, gt.call_graph, cfg).dag == discover(scaled, gt.call_graph, cfg).dag


def test_labels():
    assert DiscoveryConfig().label == "CausIL-Poly2"
    assert DiscoveryConfig(method=Method.AGGREGATED, agg_fn="max", estimator=LIN).label == "Max-fGES-Lin"
    with pytest.raises(ValueError):
        DiscoveryConfig(agg_fn="median")
