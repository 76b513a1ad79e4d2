"""Accuracy of an estimated DAG against ground truth."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

from .errors import NodeSetMismatch
from .graph import Dag

FIELDS = ("shd", "adj_p", "adj_r", "adj_f", "ahp", "ahr", "ahf")
TABLE_HEADER = ("model", "SHD", "AdjP", "AdjR", "AdjF", "AHP", "AHR", "AHF")


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _check(est: Dag, truth: Dag) -> None:
    if set(est.nodes) != set(truth.nodes):
        missing = set(truth.nodes) - set(est.nodes)
        extra = set(est.nodes) - set(truth.nodes)
        raise NodeSetMismatch(f"node sets differ (missing {len(missing)}, extra {len(extra)})")


def _edges(g: Dag) -> dict:
    """Adjacency -> directed edge."""
    return {frozenset(e): e for e in g.edges}


def shd(est: Dag, truth: Dag, reversal_cost: int = 1) -> int:
    """Missing, extra and reversed adjacencies; a reversal costs ``reversal_cost``."""
    _check(est, truth)
    e, t = _edges(est), _edges(truth)
    missing = sum(1 for k in t if k not in e)
    extra = sum(1 for k in e if k not in t)
    reversed_ = sum(1 for k in t if k in e and e[k] != t[k])
    return missing + extra + reversal_cost * reversed_


def adjacency_prf(est: Dag, truth: Dag) -> tuple[float, float, float]:
    """Skeleton precision / recall / F1. An empty estimate has precision 1."""
    _check(est, truth)
    e, t = set(_edges(est)), set(_edges(truth))
    hit = len(e & t)
    p = hit / len(e) if e else 1.0
    r = hit / len(t) if t else 1.0
    return p, r, _f1(p, r)


def arrowhead_prf(est: Dag, truth: Dag) -> tuple[float, float, float]:
    """Orientation precision / recall / F1 over adjacencies both graphs share.

    Without shared adjacencies precision is 1; recall is 1 only when the
    truth has no edges at all.
    """
    _check(est, truth)
    e, t = _edges(est), _edges(truth)
    shared = set(e) & set(t)
    hit = sum(1 for k in shared if e[k] == t[k])
    p = hit / len(shared) if shared else 1.0
    if shared:
        r = hit / len(shared)
    else:
        r = 1.0 if not t else 0.0
    return p, r, _f1(p, r)


@dataclass(frozen=True)
class EvalReport:
    shd: int
    adj_p: float
    adj_r: float
    adj_f: float
    ahp: float
    ahr: float
    ahf: float

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(**{k: obj[k] for k in FIELDS})

    def row(self, model: str, digits: int = 2) -> list:
        vals = [self.adj_p, self.adj_r, self.adj_f, self.ahp, self.ahr, self.ahf]
        return [model, self.shd] + [round(v, digits) for v in vals]


def evaluate(est: Dag, truth: Dag, reversal_cost: int = 1) -> EvalReport:
    s = shd(est, truth, reversal_cost)
    ap, ar, af = adjacency_prf(est, truth)
    hp, hr, hf = arrowhead_prf(est, truth)
    return EvalReport(s, ap, ar, af, hp, hr, hf)


def table_csv(rows) -> str:
    """CSV text with the model / SHD / AdjP .. AHF layout."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
