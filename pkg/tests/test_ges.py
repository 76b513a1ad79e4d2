import numpy as np
import pytest

from causil.ges import (GesConfig, delete_delta, fges_search, insert_delta, is_closed, run_fges,
                        valid_delete, valid_insert)
from causil.graph import Dag, Knowledge, Pdag, dag_to_cpdag, skeleton
from causil.score import EstimatorKind, StackedDataset

from helpers import linear_gaussian, random_dag

LIN = GesConfig(estimator=EstimatorKind.LINEAR)


def U(*pairs):
    return frozenset(frozenset(p) for p in pairs)


def ds_from(cols, n, seed, fn):
    rng = np.random.default_rng(seed)
    return StackedDataset(cols, fn(rng, n))


# -- whole-search behaviour ------------------------------------------------

def test_pure_noise_gives_empty_graph():
    empty = 0
    for seed in range(20):
        ds = ds_from(("a", "b", "c", "d"), 5000, seed, lambda r, n: r.normal(size=(n, 4)))
        p = run_fges(ds, None, LIN)
        empty += not p.directed and not p.undirected
    assert empty >= 19


def test_collider_is_oriented():
    def gen(r, n):
        x, y = r.normal(size=n), r.normal(size=n)
        return np.column_stack([x, y, x + y + r.normal(size=n)])
    p = run_fges(ds_from(("X", "Y", "Z"), 10_000, 0, gen), None, LIN)
    assert p.directed == {("X", "Z"), ("Y", "Z")} and not p.undirected


def test_two_node_chain_is_undirected():
    def gen(r, n):
        x = r.normal(size=n)
        return np.column_stack([x, x + r.normal(size=n)])
    p = run_fges(ds_from(("X", "Y"), 10_000, 0, gen), None, LIN)
    assert not p.directed and p.undirected == U(("X", "Y"))


@pytest.mark.parametrize("seed", range(6))
def test_recovers_small_linear_cpdag(seed):
    rng = np.random.default_rng(100 + seed)
    dag = random_dag(rng, 4, 0.5)
    ds = StackedDataset(dag.nodes, linear_gaussian(dag, 10_000, rng))
    assert run_fges(ds, None, LIN) == dag_to_cpdag(dag)


def test_knowledge_is_respected_and_never_scored():
    def gen(r, n):
        x = r.normal(size=n)
        y = x + r.normal(size=n)
        return np.column_stack([x, y, y + r.normal(size=n)])
    ds = ds_from(("X", "Y", "Z"), 5000, 1, gen)
    k = Knowledge({("X", "Y"), ("Z", "Y"), ("X", "Z"), ("Z", "X")})
    res = fges_search(ds, None, GesConfig(knowledge=k))
    assert res.stats.forbidden_scored == 0
    assert not (res.pdag.directed & k.forbidden)
    assert frozenset(("X", "Z")) not in skeleton(res.pdag)
    # Y can only have X and Z as children now
    assert res.pdag.directed == {("Y", "X"), ("Y", "Z")}


@pytest.mark.parametrize("seed", range(4))
def test_output_is_closed_cpdag_and_trace_monotone(seed):
    rng = np.random.default_rng(seed)
    dag = random_dag(rng, 6, 0.4)
    ds = StackedDataset(dag.nodes, linear_gaussian(dag, 3000, rng))
    res = fges_search(ds, None, LIN)
    assert is_closed(res.pdag)
    Dag(res.pdag.nodes, res.pdag.directed)  # directed part well formed
    totals = [t["total"] for t in res.trace]
    assert all(b >= a - 1e-6 for a, b in zip(totals, totals[1:]))
    assert all(t["delta"] > 0 for t in res.trace)


def test_parallel_and_serial_agree():
    rng = np.random.default_rng(7)
    dag = random_dag(rng, 7, 0.4)
    ds = StackedDataset(dag.nodes, linear_gaussian(dag, 2000, rng))
    a = run_fges(ds, None, GesConfig(jobs=1))
    b = run_fges(ds, None, GesConfig(jobs=4))
    assert a == b


def test_fast_mode_finds_strong_structure():
    rng = np.random.default_rng(3)
    dag = Dag(("a", "b", "c"), {("a", "c"), ("b", "c")})
    ds = StackedDataset(dag.nodes, linear_gaussian(dag, 5000, rng))
    assert run_fges(ds, None, GesConfig(fast=True)) == dag_to_cpdag(dag)


def test_max_parents_caps_in_degree():
    rng = np.random.default_rng(3)
    dag = Dag(("a", "b", "c", "d"), {("a", "d"), ("b", "d"), ("c", "d")})
    ds = StackedDataset(dag.nodes, linear_gaussian(dag, 5000, rng))
    p = run_fges(ds, None, GesConfig(max_parents=2))
    assert sum(1 for a, b in p.directed if b == "d") <= 2


def test_node_map_relabels_output():
    rng = np.random.default_rng(0)
    x = rng.normal(size=3000)
    ds = StackedDataset(("c0", "c1"), np.column_stack([x, x + rng.normal(size=3000)]))
    p = run_fges(ds, {"c0": "A", "c1": "B"}, LIN)
    assert p.nodes == ("A", "B") and p.undirected == U(("A", "B"))


# -- operator validity ------------------------------------------------------

def test_valid_insert_examples():
    empty = Pdag(("x", "y"))
    assert valid_insert("x", "y", (), empty)
    assert not valid_insert("x", "y", (), empty, Knowledge({("x", "y")}))
    p = Pdag(("x", "y", "a", "b"), (), U(("y", "a"), ("y", "b")))
    assert not valid_insert("x", "y", ("a", "b"), p)
    assert valid_insert("x", "y", ("a",), p)


def test_valid_insert_blocks_semi_directed_cycle():
    # y -> m -> x: inserting x -> y would close a cycle
    p = Pdag(("x", "y", "m"), {("y", "m"), ("m", "x")})
    assert not valid_insert("x", "y", (), p)


def test_valid_delete_examples():
    assert valid_delete("x", "y", (), Pdag(("x", "y"), (), U(("x", "y"))))
    p = Pdag(("x", "y", "a", "b"), (), U(("x", "y"), ("y", "a"), ("y", "b"), ("x", "a"), ("x", "b")))
    assert not valid_delete("x", "y", (), p)
    assert valid_delete("x", "y", ("a", "b"), p)


# -- deltas -----------------------------------------------------------------

def test_insert_delta_irrelevant_is_negative():
    neg = 0
    for seed in range(20):
        ds = ds_from(("x", "y"), 5000, seed, lambda r, n: r.normal(size=(n, 2)))
        neg += insert_delta(ds, "x", "y", (), Pdag(("x", "y")), LIN) < 0
    assert neg >= 19


def test_insert_delta_signal_positive_and_deterministic():
    def gen(r, n):
        x = r.normal(size=n)
        return np.column_stack([x, 3 * x + r.normal(size=n)])
    ds = ds_from(("x", "y"), 1000, 0, gen)
    d1 = insert_delta(ds, "x", "y", (), Pdag(("x", "y")), LIN)
    assert d1 > 0
    assert d1 == insert_delta(ds, "x", "y", (), Pdag(("x", "y")), LIN)


def test_delete_delta_signs():
    def gen(r, n):
        x, z = r.normal(size=n), r.normal(size=n)
        return np.column_stack([x, z, x + r.normal(size=n)])
    ds = ds_from(("x", "z", "y"), 10_000, 0, gen)
    p = Pdag(("x", "z", "y"), {("x", "y"), ("z", "y")})
    assert delete_delta(ds, "z", "y", (), p, LIN) > 0
    assert delete_delta(ds, "x", "y", (), p, LIN) < 0
    assert delete_delta(ds, "z", "y", (), p, LIN) == delete_delta(ds, "z", "y", (), p, LIN)
