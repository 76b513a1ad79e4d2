"""Command-line interface: ``causil generate | discover | evaluate | knowledge | report``.

Exit codes: 0 success, 2 bad configuration or input, 3 runtime failure,
4 node-set mismatch between graphs. ``CAUSIL_SEED`` overrides config seeds.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .datagen import (MetricPanel, SemiSyntheticOptions, build_ground_truth_metric_graph,
                      fit_semi_synthetic_functions, generate_synthetic, load_sim_config)
from .errors import CausilError, InvalidConfig, NodeSetMismatch
from .evaluate import TABLE_HEADER, evaluate, table_csv
from .graph import Dag, Pdag, ServiceCallGraph, dumps_graph, graph_from_json, to_dot
from .pipeline import DiscoveryConfig, Method, discover, generate_domain_knowledge
from .score import EstimatorKind, ScoreParams

log = logging.getLogger("causil")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_MISMATCH = 0, 2, 3, 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"no such file: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _manifest(command: str, **extra) -> dict:
    return {"tool": "causil", "version": __version__, "command": command, **extra}


def _seed_override(seed):
    env = os.environ.get("CAUSIL_SEED")
    if env is None or env == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"CAUSIL_SEED must be an integer, got {env!r}") from None


def _load_callgraph(path) -> ServiceCallGraph:
    obj = _read_json(path)
    try:
        return ServiceCallGraph.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad call graph {path}: {exc}") from None


def _load_graph(path) -> Dag:
    obj = _read_json(path)
    try:
        g = graph_from_json(obj)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"bad graph {path}: {exc}") from None
    if isinstance(g, Pdag):
        raise ConfigError(f"{path} has undirected edges; evaluation compares DAGs")
    return g


def _load_panel(path) -> MetricPanel:
    if not Path(path).is_file():
        raise ConfigError(f"no such file: {path}")
    return MetricPanel.read_csv(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_sim_config(args.config)
    seed = _seed_override(args.seed if args.seed is not None else cfg.seed)
    cfg = replace(cfg, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    functions = None
    call_graph = None
    if args.semi_from:
        real = _load_panel(args.semi_from)
        real_cg = _load_callgraph(args.real_callgraph) if args.real_callgraph else None
        if real_cg is None:
            raise ConfigError("--semi-from needs --real-callgraph")
        real_truth = build_ground_truth_metric_graph(real_cg, cfg.template)
        functions = fit_semi_synthetic_functions(real, real_truth, SemiSyntheticOptions(seed=seed))
        cfg = replace(cfg, T=args.T or functions.exogenous.shape[1])
    if args.callgraph:
        call_graph = _load_callgraph(args.callgraph)
        cfg = replace(cfg, n_services=call_graph.n_services)
    panel, truth = generate_synthetic(cfg, functions, call_graph)
    panel.write_csv(out / "panel.csv")
    (out / "truth.json").write_text(dumps_graph(truth.metric_dag))
    _write_json(out / "callgraph.json", truth.call_graph.to_json())
    _write_json(out / "ground_truth.json", truth.to_json())
    _write_json(out / "config.json", cfg.to_json())
    _write_json(out / "manifest.json", _manifest(
        "generate", seed=seed, config_hash=cfg.digest(), mode="semi-synthetic" if functions else "synthetic",
        n_rows=int(sum(len(p.t) for p in panel.services.values())),
        panel_sha=_sha((out / "panel.csv").read_bytes()),
        truth_sha=_sha((out / "truth.json").read_bytes()), seconds=time.perf_counter() - t0))
    print(f"wrote {out}/panel.csv ({panel.n_records()} records), truth.json, callgraph.json")
    return EXIT_OK


def _slug(cfg: DiscoveryConfig) -> str:
    return cfg.label.lower()


def _discovery_configs(args) -> list[DiscoveryConfig]:
    methods = args.method or ["causil"]
    estimators = args.estimator or ["poly2"]
    out = []
    try:
        params = ScoreParams(rho=args.rho)
        for m in methods:
            for e in estimators:
                out.append(DiscoveryConfig(method=Method.parse(m), agg_fn=args.agg,
                                           estimator=EstimatorKind.parse(e), use_domain_knowledge=args.dk,
                                           params=params, jobs=args.jobs, max_parents=args.max_parents,
                                           global_search=args.global_search))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return out


def cmd_discover(args) -> int:
    cg = _load_callgraph(args.callgraph)
    panel = _load_panel(args.panel)
    missing = [s for s in range(cg.n_services) if s not in panel.services]
    if missing:
        raise ConfigError(f"panel lacks services {missing} of the call graph")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for cfg in _discovery_configs(args):
        slug = _slug(cfg)
        try:
            res = discover(panel, cg, cfg)
        except CausilError as exc:
            raise RuntimeError(f"{cfg.label}: {exc}") from exc
        (out / f"{slug}.json").write_text(dumps_graph(res.dag))
        if args.dot:
            (out / f"{slug}.dot").write_text(to_dot(res.dag, slug.replace("-", "_")))
        info = res.manifest()
        info.update(model=cfg.label, file=f"{slug}.json", dk=cfg.use_domain_knowledge,
                    estimator=cfg.estimator.label, method=cfg.method.value, agg_fn=cfg.agg_fn,
                    graph_sha=_sha((out / f"{slug}.json").read_bytes()))
        runs.append(info)
        print(f"{cfg.label}: {len(res.dag.edges)} edges in {res.seconds:.2f}s -> {out / (slug + '.json')}")
    inputs = {"panel_sha": _sha(Path(args.panel).read_bytes()),
              "callgraph_sha": _sha(Path(args.callgraph).read_bytes())}
    _write_json(out / "manifest.json", _manifest("discover", config_hash=_sha(json.dumps(
        [r["model"] for r in runs] + [args.dk, args.rho, args.agg], sort_keys=True).encode()),
        seed=_seed_override(None), runs=runs, **inputs))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth = _load_graph(args.truth)
    truth_sha = _sha(Path(args.truth).read_bytes())
    if args.batch:
        d = Path(args.batch)
        if not d.is_dir():
            raise ConfigError(f"no such directory: {d}")
        names = {}
        man = d / "manifest.json"
        if man.is_file():
            for r in _read_json(man).get("runs", []):
                names[r["file"]] = r["model"]
        rows, reports = [], {}
        for f in sorted(d.glob("*.json")):
            if f.name in ("manifest.json", "reports.json"):
                continue
            rep = evaluate(_load_graph(f), truth, 2 if args.reversal_twice else 1)
            model = names.get(f.name, f.stem)
            rows.append(rep.row(model, args.digits))
            reports[model] = rep.to_json()
        text = table_csv(rows)
        if args.out:
            Path(args.out).write_text(text)
            _write_json(Path(args.out).with_suffix(".manifest.json"),
                        _manifest("evaluate", truth_sha=truth_sha, reports=reports))
        sys.stdout.write(text)
        return EXIT_OK
    if not args.est:
        raise ConfigError("give --est or --batch")
    rep = evaluate(_load_graph(args.est), truth, 2 if args.reversal_twice else 1)
    if args.out:
        Path(args.out).write_text(rep.dumps())
    sys.stdout.write(rep.dumps())
    sys.stdout.write(table_csv([rep.row(args.model or Path(args.est).stem, args.digits)]))
    return EXIT_OK


def cmd_knowledge(args) -> int:
    cg = _load_callgraph(args.callgraph)
    k = generate_domain_knowledge(cg)
    rows = sorted(k.forbidden)
    lines = ["from_service,from_category,to_service,to_category"]
    lines += [f"{a.service},{a.category.short},{b.service},{b.category.short}" for a, b in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("%d forbidden edges", len(rows))
    return EXIT_OK


def cmd_report(args) -> int:
    """Mean of every metric per model across batch CSVs."""
    acc: dict = {}
    order = []
    for path in args.inputs:
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or tuple(reader.fieldnames) != TABLE_HEADER:
                    raise ConfigError(f"{path} is not a batch table")
                for row in reader:
                    m = row["model"]
                    if m not in acc:
                        acc[m] = []
                        order.append(m)
                    acc[m].append([float(row[h]) for h in TABLE_HEADER[1:]])
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
    rows = []
    for m in order:
        vals = acc[m]
        means = [sum(col) / len(col) for col in zip(*vals)]
        rows.append([m] + [round(v, args.digits) for v in means])
    text = table_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causil", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"causil {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a panel and its ground truth")
    g.add_argument("--config", required=True, help="SimConfig JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--callgraph", help="use this call graph instead of a random one")
    g.add_argument("--semi-from", help="real panel CSV to learn semi-synthetic mechanisms from")
    g.add_argument("--real-callgraph", help="call graph of the real panel")
    g.add_argument("--T", type=int, help="timestamps in semi-synthetic mode (default: real length)")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("discover", help="learn a metric graph from a panel")
    d.add_argument("--panel", required=True)
    d.add_argument("--callgraph", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--method", action="append", help="causil or agg-fges (repeatable)")
    d.add_argument("--estimator", action="append", help="lin, poly2 or poly3 (repeatable)")
    d.add_argument("--agg", default="mean", help="aggregation for agg-fges: mean, max, min, sum")
    dk = d.add_mutually_exclusive_group()
    dk.add_argument("--dk", dest="dk", action="store_true", default=True)
    dk.add_argument("--no-dk", dest="dk", action="store_false")
    d.add_argument("--rho", type=float, default=2.0)
    d.add_argument("--jobs", type=int, default=1)
    d.add_argument("--max-parents", type=int)
    d.add_argument("--global", dest="global_search", action="store_true",
                   help="agg-fges: one joint search instead of per service")
    d.add_argument("--dot", action="store_true", help="also write DOT files")
    d.set_defaults(func=cmd_discover)

    e = sub.add_parser("evaluate", help="compare graphs against ground truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--est")
    e.add_argument("--batch", help="directory of graph JSON files")
    e.add_argument("--model")
    e.add_argument("--out")
    e.add_argument("--digits", type=int, default=4)
    e.add_argument("--reversal-twice", action="store_true", help="count a reversal as two edits")
    e.set_defaults(func=cmd_evaluate)

    k = sub.add_parser("knowledge", help="list the forbidden edges for a call graph")
    k.add_argument("--callgraph", required=True)
    k.add_argument("--out")
    k.set_defaults(func=cmd_knowledge)

    r = sub.add_parser("report", help="average batch tables per model")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out")
    r.add_argument("--digits", type=int, default=4)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidConfig) as exc:
        print(f"causil: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NodeSetMismatch as exc:
        print(f"causil: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (CausilError, RuntimeError, ValueError) as exc:
        print(f"causil: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
