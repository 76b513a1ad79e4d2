"""Penalised-BIC local scores over linear / polynomial least-squares fits.

The score of a child ``y`` given parents ``P`` is

    -( n * ln(rss / n) + rho * k * ln(n) )

where ``rss`` is the residual sum of squares of an OLS fit of ``y`` on the
polynomial basis of ``P`` (intercept plus per-variable powers), ``k`` the
number of coefficients including the intercept and ``n`` the row count.
Higher is better. The additive Gaussian constant is dropped.
"""
from __future__ import annotations

import enum
import logging
import math
import threading
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from . import kernels
from .errors import DegenerateData

log = logging.getLogger(__name__)


class EstimatorKind(enum.Enum):
    LINEAR = 1
    POLY2 = 2
    POLY3 = 3

    @property
    def degree(self) -> int:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "EstimatorKind":
        key = text.strip().lower()
        aliases = {"lin": cls.LINEAR, "linear": cls.LINEAR, "ols": cls.LINEAR,
                   "poly2": cls.POLY2, "p2": cls.POLY2, "poly3": cls.POLY3, "p3": cls.POLY3}
        if key not in aliases:
            raise ValueError(f"unknown estimator {text!r}")
        return aliases[key]

    @property
    def label(self) -> str:
        return {1: "Lin", 2: "Poly2", 3: "Poly3"}[self.value]


@dataclass(frozen=True)
class ScoreParams:
    """``rho`` multiplies the BIC penalty. ``ridge_eps`` is relative: the
    normal equations get ``ridge_eps * mean(diag(X'X))`` added to the diagonal,
    computed in the standardised basis so scores do not depend on units."""

    rho: float = 2.0
    ridge_eps: float = 1e-8
    interactions: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")


@dataclass(frozen=True, eq=False)
class StackedDataset:
    """One row per (timestamp, instance) observation, one column per variable.

    ``groups`` optionally carries the timestamp index of each row.
    """

    columns: tuple
    data: np.ndarray
    groups: np.ndarray | None = None
    _moments: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 2 or data.shape[1] != len(self.columns):
            raise ValueError("data must be 2-D with one column per label")
        if data.shape[0] < 1:
            raise DegenerateData("dataset has no rows")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column labels must be unique")
        if not np.isfinite(data).all():
            raise ValueError("dataset contains missing or non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def index(self, label) -> int:
        return self.columns.index(label)

    def column(self, label) -> np.ndarray:
        return self.data[:, self.index(label)]

    def moments(self, degree: int) -> "BasisMoments":
        with _MOMENT_LOCK:
            if degree not in self._moments:
                self._moments[degree] = BasisMoments.build(self.data, degree)
            return self._moments[degree]


_MOMENT_LOCK = threading.Lock()


def expand_basis(rows: np.ndarray, degree: int, interactions: bool = False) -> np.ndarray:
    """Design matrix ``[1, p, p**2, ..., p**degree]`` for the columns of ``rows``.

    Without interactions the layout is the intercept, then all linear columns,
    then all squares, then all cubes, giving ``1 + degree * m`` columns. With
    ``interactions`` every monomial of total degree <= ``degree`` is included.
    """
    if degree not in (1, 2, 3):
        raise ValueError("degree must be 1, 2 or 3")
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[:, None]
    n, m = rows.shape
    cols = [np.ones(n)]
    if not interactions:
        for p in range(1, degree + 1):
            cols.extend(rows[:, v] ** p for v in range(m))
    else:
        for d in range(1, degree + 1):
            for combo in combinations_with_replacement(range(m), d):
                cols.append(np.prod(rows[:, combo], axis=1))
    return np.column_stack(cols)


def fit_ols(design: np.ndarray, y: np.ndarray, ridge_eps: float = 0.0):
    """Solve ``(X'X + ridge_eps I) beta = X'y``; return ``(beta, rss)``."""
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("design rows and y length differ")
    A = X.T @ X
    if ridge_eps:
        A = A + ridge_eps * np.eye(A.shape[0])
    beta = np.linalg.lstsq(A, X.T @ y, rcond=None)[0] if not ridge_eps else np.linalg.solve(A, X.T @ y)
    resid = y - X @ beta
    return beta, float(resid @ resid)


@dataclass
class BasisMoments:
    """Gram matrix of the centred, unit-variance pure-power basis of a dataset.

    Variables are standardised before taking powers and every power column is
    standardised again afterwards. The polynomial span with an intercept is
    unchanged by these affine maps, so residuals match a raw-basis fit.
    """

    G: np.ndarray
    col_scale: np.ndarray  # raw units per standardised unit, linear columns
    n: int
    m: int
    degree: int
    var_n: np.ndarray = None  # centred sum of squares per raw column, 0 if constant

    @classmethod
    def build(cls, data: np.ndarray, degree: int) -> "BasisMoments":
        n, m = data.shape
        mu = data.mean(axis=0)
        sd = data.std(axis=0)
        const = sd <= 1e-12 * (np.abs(mu) + 1e-300)
        safe = np.where(const, 1.0, sd)
        z = (data - mu) / safe
        z[:, const] = 0.0
        blocks = [z]
        for p in range(2, degree + 1):
            blocks.append(z ** p)
        Z = np.concatenate(blocks, axis=1)
        Z = Z - Z.mean(axis=0)
        zs = np.sqrt((Z * Z).mean(axis=0))
        # constant basis columns (incl. e.g. the square of a +-1 variable) stay zero
        dead = zs <= 1e-10
        zs = np.where(dead, 1.0, zs)
        Z = Z / zs
        Z[:, dead] = 0.0
        G = Z.T @ Z
        var_n = np.where(const, 0.0, n * sd * sd)
        return cls(G=np.ascontiguousarray(G), col_scale=safe * zs[:m], n=n, m=m, degree=degree,
                   var_n=var_n)

    def parent_index(self, parents) -> np.ndarray:
        parents = sorted(parents)
        return np.array([v + p * self.m for p in range(self.degree) for v in parents], dtype=np.int64)

    def rss(self, target: int, parents, ridge_eps: float) -> float:
        """Residual sum of squares in the units of the raw target column."""
        idx = self.parent_index(parents)
        r = kernels.subset_rss(self.G, idx, target, ridge_eps)
        return float(r) * self.col_scale[target] ** 2


def _bic(n: int, k: int, rss: float, var_n: float, rho: float, where) -> float:
    if n <= k or not var_n > 0 or not math.isfinite(rss):
        ds, t, ps = where
        where = f"score({ds.columns[t]!r} | {[ds.columns[p] for p in ps]})"
    if n <= k:
        raise DegenerateData(f"{where}: n={n} <= k={k}")
    if not var_n > 0:
        raise DegenerateData(f"{where}: target column is constant")
    if not math.isfinite(rss):
        raise DegenerateData(f"{where}: normal equations are singular")
    floor = 1e-12 * var_n
    if rss < floor:
        log.debug("rss floored for column %s", where[1])
        rss = floor
    return -(n * math.log(rss / n) + rho * k * math.log(n))


def _n_coef(m: int, degree: int, interactions: bool) -> int:
    if not interactions:
        return 1 + degree * m
    return math.comb(m + degree, degree)


def local_score(ds: StackedDataset, target, parents, est: EstimatorKind,
                params: ScoreParams = ScoreParams()) -> float:
    """BIC local score of column ``target`` given the column set ``parents``.

    Column references may be labels or integer positions.
    """
    t = _col(ds, target)
    ps = sorted({_col(ds, p) for p in parents})
    if t in ps:
        raise ValueError("target cannot be its own parent")
    degree = est.degree
    k = _n_coef(len(ps), degree, params.interactions)
    mom = ds.moments(degree)
    var_n = float(mom.var_n[t])
    if params.interactions and len(ps) > 1:
        rss = _interaction_rss(ds, t, ps, degree, params.ridge_eps)
    else:
        rss = mom.rss(t, ps, params.ridge_eps)
    return _bic(ds.n, k, rss, var_n, params.rho, (ds, t, ps))


def _interaction_rss(ds, t, ps, degree, ridge_rel) -> float:
    x = ds.data[:, ps]
    sd = x.std(axis=0)
    x = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    X = expand_basis(x, degree, interactions=True)[:, 1:]
    X = X - X.mean(axis=0)
    y = ds.data[:, t] - ds.data[:, t].mean()
    A = X.T @ X
    lam = ridge_rel * np.trace(A) / A.shape[0]
    beta = np.linalg.solve(A + lam * np.eye(A.shape[0]), X.T @ y)
    r = y - X @ beta
    return float(r @ r)


def _col(ds: StackedDataset, ref) -> int:
    if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
        return int(ref)
    return ds.index(ref)


class BicScorer:
    """Memoised local scores over one dataset, keyed by ``(target, parents)``.

    Safe for concurrent use: lookups are lock-free reads of a dict and
    insertion happens under a lock. A cached value is always identical to a
    fresh :func:`local_score` call.
    """

    def __init__(self, ds: StackedDataset, est: EstimatorKind, params: ScoreParams = ScoreParams()):
        self.ds = ds
        self.est = est
        self.params = params
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.evaluations = 0
        if not params.interactions:
            ds.moments(est.degree)

    def __call__(self, target: int, parents) -> float:
        key = (target, frozenset(parents))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        value = local_score(self.ds, target, key[1], self.est, self.params)
        with self._lock:
            self._cache.setdefault(key, value)
            self.evaluations += 1
        return value

    def total(self, parent_map: dict) -> float:
        return sum(self(t, ps) for t, ps in parent_map.items())


def total_score(ds: StackedDataset, dag, est: EstimatorKind, params: ScoreParams = ScoreParams(),
                node_of=None) -> float:
    """Sum of local scores of every node given its parents in ``dag``.

    ``node_of`` maps column positions to DAG nodes (defaults to the labels).
    """
    node_of = node_of or {i: c for i, c in enumerate(ds.columns)}
    col_of = {v: i for i, v in node_of.items()}
    parents = {col_of[v]: [] for v in dag.nodes}
    for a, b in dag.edges:
        parents[col_of[b]].append(col_of[a])
    return sum(local_score(ds, t, ps, est, params) for t, ps in parents.items())
