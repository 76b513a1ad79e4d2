import json

import numpy as np
import pytest

from causil.errors import NodeSetMismatch
from causil.evaluate import (EvalReport, adjacency_prf, arrowhead_prf, evaluate, shd, table_csv)
from causil.graph import Dag

from helpers import random_dag_pair
from oracles import adjacency_bruteforce, arrowhead_bruteforce, shd_bruteforce

NODES = ("a", "b", "c", "d", "e", "f")


def G(*edges):
    return Dag(NODES, frozenset(edges))


def test_shd_examples():
    truth = G(("b", "a"), ("c", "d"), ("a", "c"))
    assert shd(truth, truth) == 0
    assert shd(G(), truth) == 3
    assert shd(G(("a", "b"), ("c", "d")), truth) == 2


def test_shd_reversal_twice():
    truth = G(("b", "a"))
    assert shd(G(("a", "b")), truth, reversal_cost=2) == 2


def test_adjacency_examples():
    truth = G(("a", "b"), ("c", "d"), ("e", "f"), ("a", "c"))
    assert adjacency_prf(truth, truth) == (1.0, 1.0, 1.0)
    p, r, f = adjacency_prf(G(("a", "b"), ("c", "d")), truth)
    assert (p, r) == (1.0, 0.5) and f == pytest.approx(2 / 3)
    assert adjacency_prf(G(), truth) == (1.0, 0.0, 0.0)
    assert adjacency_prf(G(), G()) == (1.0, 1.0, 1.0)


def test_arrowhead_examples():
    truth = G(("a", "b"), ("d", "c"), ("e", "f"))
    assert arrowhead_prf(truth, truth) == (1.0, 1.0, 1.0)
    assert arrowhead_prf(G(("b", "a"), ("c", "d"), ("f", "e")), truth) == (0.0, 0.0, 0.0)
    assert arrowhead_prf(G(("a", "b"), ("c", "d")), truth) == (0.5, 0.5, 0.5)


def test_arrowhead_without_shared_adjacencies():
    assert arrowhead_prf(G(("a", "b")), G(("c", "d"))) == (1.0, 0.0, 0.0)
    assert arrowhead_prf(G(("a", "b")), G()) == (1.0, 1.0, 1.0)


def test_node_set_mismatch():
    with pytest.raises(NodeSetMismatch):
        shd(Dag(("a",)), Dag(("b",)))


@pytest.mark.parametrize("seed", range(50))
def test_metrics_match_bruteforce(seed):
    est, truth = random_dag_pair(np.random.default_rng(seed))
    assert shd(est, truth) == shd_bruteforce(est, truth)
    assert shd(est, truth, 2) == shd_bruteforce(est, truth, 2)
    assert adjacency_prf(est, truth) == adjacency_bruteforce(est, truth)
    assert arrowhead_prf(est, truth) == arrowhead_bruteforce(est, truth)


@pytest.mark.parametrize("seed", range(20))
def test_metric_properties(seed):
    rng = np.random.default_rng(1000 + seed)
    est, truth = random_dag_pair(rng)
    assert shd(est, truth) == shd(truth, est)
    n = len(truth.nodes)
    assert 0 <= shd(est, truth) <= n * (n - 1) // 2
    flipped = Dag(est.nodes, frozenset((b, a) if rng.random() < 0.5 else (a, b) for a, b in est.edges))
    assert adjacency_prf(flipped, truth) == adjacency_prf(est, truth)
    rep = evaluate(est, truth)
    for p, r, f in ((rep.adj_p, rep.adj_r, rep.adj_f), (rep.ahp, rep.ahr, rep.ahf)):
        assert 0 <= p <= 1 and 0 <= r <= 1
        assert f == pytest.approx(0.0 if p + r == 0 else 2 * p * r / (p + r))


def test_report_serialisation_and_table():
    truth = G(("a", "b"), ("b", "c"))
    rep = evaluate(G(("a", "b")), truth)
    obj = json.loads(rep.dumps())
    assert set(obj) == {"shd", "adj_p", "adj_r", "adj_f", "ahp", "ahr", "ahf"}
    assert EvalReport.from_json(obj) == rep
    text = table_csv([rep.row("CausIL-Poly2")])
    assert text.splitlines() == ["model,SHD,AdjP,AdjR,AdjF,AHP,AHR,AHF",
                                 "CausIL-Poly2,1,1.0,0.5,0.67,1.0,1.0,1.0"]
