import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causil.errors import DegenerateData
from causil.graph import Dag
from causil.score import (BicScorer, EstimatorKind, ScoreParams, StackedDataset, expand_basis,
                          fit_ols, local_score, total_score)

from helpers import linear_gaussian, random_dag
from oracles import reference_bic

LIN, P2, P3 = EstimatorKind.LINEAR, EstimatorKind.POLY2, EstimatorKind.POLY3


# -- basis / OLS ------------------------------------------------------------

def test_expand_basis_shapes():
    assert expand_basis(np.zeros((4, 0)), 2).shape == (4, 1)
    assert expand_basis(np.ones((4, 2)), 2).shape == (4, 5)
    assert expand_basis(np.array([[2.0]]), 3).tolist() == [[1.0, 2.0, 4.0, 8.0]]


def test_expand_basis_interactions():
    X = np.array([[2.0, 3.0]])
    assert expand_basis(X, 2, interactions=True).tolist() == [[1, 2, 3, 4, 6, 9]]


def test_fit_ols_exact_fit():
    rng = np.random.default_rng(0)
    x = rng.normal(size=50)
    _, rss = fit_ols(expand_basis(x[:, None], 1), 3 * x + 1)
    assert rss <= 1e-9 * np.sum((3 * x + 1) ** 2)


def test_fit_ols_intercept_only():
    y = np.array([1.0, 2.0, 6.0])
    beta, rss = fit_ols(np.ones((3, 1)), y)
    assert np.isclose(beta[0], 3.0)
    assert np.isclose(rss, 14.0)


def test_fit_ols_matches_normal_equations():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 3))
    y = rng.normal(size=50)
    beta, _ = fit_ols(X, y)
    ref = np.linalg.solve(X.T @ X, X.T @ y)
    assert np.allclose(beta, ref, rtol=1e-9, atol=1e-12)


# -- local score ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(25))
def test_local_score_matches_independent_bic(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 6))
    X = rng.normal(size=(int(rng.integers(100, 600)), m)) * rng.uniform(0.1, 50, size=m)
    X[:, -1] += X[:, 0] ** 2 - X[:, m - 2]  # the target keeps its own noise
    parents = set(rng.choice(m - 1, size=int(rng.integers(0, m)), replace=False).tolist())
    est = [LIN, P2, P3][seed % 3]
    ds = StackedDataset(tuple(range(m)), X)
    got = local_score(ds, m - 1, parents, est)
    want = reference_bic(X, m - 1, parents, est.degree)
    assert got == pytest.approx(want, rel=1e-9)


def test_noise_target_prefers_empty_parent_set():
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ds = StackedDataset(("x", "y"), rng.normal(size=(5000, 2)))
        wins += local_score(ds, "y", [], LIN) > local_score(ds, "y", ["x"], LIN)
    assert wins >= 95


def test_signal_parent_is_rewarded():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000)
    ds = StackedDataset(("x", "y"), np.column_stack([x, 2 * x + rng.normal(size=1000)]))
    assert local_score(ds, "y", ["x"], LIN) > local_score(ds, "y", [], LIN)


def test_score_deterministic_and_row_order_invariant():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(400, 3))
    X[:, 2] += X[:, 0] ** 2
    ds = StackedDataset(("a", "b", "c"), X)
    s1 = local_score(ds, "c", ["a", "b"], P2)
    assert s1 == local_score(StackedDataset(("a", "b", "c"), X.copy()), "c", ["a", "b"], P2)
    perm = StackedDataset(("a", "b", "c"), X[rng.permutation(400)])
    assert local_score(perm, "c", ["a", "b"], P2) == pytest.approx(s1, rel=1e-10)


def test_nested_parent_sets_do_not_increase_rss():
    # the penalty is the same function of k, so compare penalised-free fits
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 4))
    ds = StackedDataset(tuple(range(4)), X)
    p = ScoreParams(rho=1e-9)
    s_small = local_score(ds, 3, [0], P2, p)
    s_big = local_score(ds, 3, [0, 1, 2], P2, p)
    assert s_big >= s_small - 1e-6


def test_degenerate_inputs():
    ds = StackedDataset(("x", "y"), np.column_stack([np.arange(3.0), np.ones(3)]))
    with pytest.raises(DegenerateData):
        local_score(ds, "y", [], LIN)  # constant target
    with pytest.raises(DegenerateData):
        local_score(StackedDataset(("x", "y"), np.random.default_rng(0).normal(size=(3, 2))), "y", ["x"], P2)


def test_exact_relation_is_floored_not_infinite():
    x = np.linspace(0, 1, 200)
    ds = StackedDataset(("x", "y"), np.column_stack([x, 4 * x + 1]))
    assert np.isfinite(local_score(ds, "y", ["x"], LIN))


def test_rho_must_be_positive():
    with pytest.raises(ValueError):
        ScoreParams(rho=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_decomposability(seed):
    rng = np.random.default_rng(seed)
    dag = random_dag(rng, 5, 0.5)
    X = linear_gaussian(dag, 300, rng)
    ds = StackedDataset(dag.nodes, X)
    total = total_score(ds, dag, P2)
    parts = sum(local_score(ds, v, dag.parents(v), P2) for v in dag.nodes)
    assert total == pytest.approx(parts, rel=1e-12)


def test_cached_scorer_equals_fresh_call():
    rng = np.random.default_rng(4)
    ds = StackedDataset(tuple(range(4)), rng.normal(size=(200, 4)))
    sc = BicScorer(ds, P2)
    for ps in ([], [0], [0, 1], [1, 2]):
        a = sc(3, ps)
        assert a == sc(3, ps) == local_score(ds, 3, ps, P2)
    assert sc.evaluations == 4
