"""Small fixtures shared by the test modules."""
from __future__ import annotations

import itertools

import numpy as np

from causil.graph import Dag


def random_dag(rng, n_nodes: int, p: float, names=None) -> Dag:
    nodes = tuple(names or (f"x{i}" for i in range(n_nodes)))
    edges = [(nodes[i], nodes[j]) for i, j in itertools.combinations(range(n_nodes), 2) if rng.random() < p]
    return Dag(nodes, frozenset(edges))


def linear_gaussian(dag: Dag, n: int, rng) -> np.ndarray:
    """Samples in ``dag.nodes`` column order; nodes must be listed topologically."""
    pos = dag.position
    X = np.zeros((n, len(dag.nodes)))
    for j, v in enumerate(dag.nodes):
        X[:, j] = rng.normal(size=n)
        for a in dag.parents(v):
            X[:, j] += rng.uniform(0.5, 1.5) * rng.choice([-1, 1]) * X[:, pos[a]]
    return X


def random_dag_pair(rng, max_nodes: int = 6):
    """Two random DAGs on the same node set with independent edges and orientations."""
    n = int(rng.integers(1, max_nodes + 1))
    nodes = tuple(range(n))
    out = []
    for _ in range(2):
        order = rng.permutation(n)
        edges = [(int(order[i]), int(order[j])) for i, j in itertools.combinations(range(n), 2)
                 if rng.random() < 0.45]
        out.append(Dag(nodes, frozenset(edges)))
    return out
