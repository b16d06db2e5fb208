"""Command-line entry point: ``relscene <command> ...``.

Exit codes: 0 success, 1 invalid input, 2 model client failure after retries.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from .clients import HttpChatClient, OracleClient, RandomClassClient, ReplayClient, describe_client
from .config import ToolkitConfig
from .dataio import (
    IoError,
    ParseError,
    ValidationError,
    atomic_write,
    load_report,
    load_scene,
    load_statements,
    read_manifest,
    save_generated_edges,
    save_report,
    save_scene,
    save_statements,
)
from .evaluation import MismatchedRuns, RunReport, accuracy, compare_runs, format_comparison, random_baseline
from .grounding import ClientError, build_prompt, ground_many
from .relations import compute_relations
from .scene import SceneError
from .serialize import GraphVariant, MissingEdges, serialize_graph
from .statements import generate_statements, sample_synonym_statements
from .vision import generate_edges_for_graph, lint_generated_edge

log = logging.getLogger("relscene")

EXIT_OK, EXIT_INVALID, EXIT_CLIENT = 0, 1, 2


class ClientFailure(RuntimeError):
    pass


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc) if epoch else dt.datetime.now(dt.timezone.utc)
    return when.isoformat(timespec="seconds")


def _path(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(args.workdir) / p


def _config(args) -> ToolkitConfig:
    cfg = ToolkitConfig.load(_path(args, args.config)) if args.config else ToolkitConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.parallel is not None:
        cfg.parallel = args.parallel
    if args.client is not None:
        cfg.client = args.client
    return cfg


def make_client(spec: str, cfg: ToolkitConfig, args, graph=None):
    if spec == "oracle":
        if graph is None:
            raise ValueError("the oracle client needs a scene")
        return OracleClient(graph, synonyms=cfg.synonyms)
    if spec == "random":
        return RandomClassClient(cfg.seed)
    if spec.startswith("replay:"):
        return ReplayClient(_path(args, spec.split(":", 1)[1]))
    if spec == "http" or spec.startswith("http:"):
        h = cfg.http
        endpoint = spec.split(":", 1)[1] if spec.startswith("http:") else h.endpoint
        model = getattr(args, "model", None) or h.model
        return HttpChatClient(endpoint, model, h.api_key_env, h.timeout, h.temperature)
    raise ValueError(f"unknown client {spec!r} (oracle, random, replay:PATH, http[:URL])")


def _scene_statements(statements, graph):
    own = [s for s in statements if s.scene_id == graph.scene_id]
    if len(own) != len(statements):
        log.warning("skipping %d statement(s) of other scenes", len(statements) - len(own))
    return own


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_relate(args) -> int:
    cfg = _config(args)
    scene_path = _path(args, args.scene)
    graph, _ = load_scene(scene_path)
    edges = compute_relations(graph, cfg.relations)
    save_scene(graph.with_edges(edges), _path(args, args.out), read_manifest(scene_path))
    log.info("scene %s: %d geometric edge(s) written", graph.scene_id, len(edges))
    print(len(edges))
    return EXIT_OK


def cmd_statements(args) -> int:
    cfg = _config(args)
    graph, _ = load_scene(_path(args, args.scene))
    if not graph.closed_edges():
        raise MissingEdges(f"scene {graph.scene_id!r} has no closed edges; run `relscene relate` first")
    statements = sample_synonym_statements(generate_statements(graph, cfg.synonyms), cfg.seed)
    save_statements(statements, _path(args, args.out))
    log.info("scene %s: %d statement(s)", graph.scene_id, len(statements))
    print(len(statements))
    return EXIT_OK


def cmd_serialize(args) -> int:
    cfg = _config(args)
    graph, _ = load_scene(_path(args, args.scene))
    text = serialize_graph(graph, GraphVariant(args.variant))
    if args.statement:
        for m in build_prompt(text, args.statement, cfg.prompt):
            print(f"--- {m.role} ---\n{m.content}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _run_id(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


def run_grounding(graph, statements, variant, client, cfg, run_id=None, extra=None) -> RunReport:
    results = ground_many(statements, graph, variant, client, cfg.prompt, cfg.parallel)
    config = cfg.snapshot()
    config["client"] = describe_client(client)
    config.update(extra or {})
    rid = run_id or _run_id(graph.scene_id, [s.key() for s in statements], variant.value, config)
    return RunReport(rid, client.name, variant, results, _timestamp(), config)


def cmd_ground(args) -> int:
    cfg = _config(args)
    graph, _ = load_scene(_path(args, args.scene))
    statements = _scene_statements(load_statements(_path(args, args.statements)), graph)
    variant = GraphVariant(args.variant)
    client = make_client(cfg.client, cfg, args, graph)
    report = run_grounding(graph, statements, variant, client, cfg, args.run_id)
    save_report(report, _path(args, args.out))
    acc = report.accuracy if report.results else float("nan")
    print(f"{report.run_id}\t{variant.value}\t{report.correct_count}/{report.total}\taccuracy={acc:.4f}")
    failures = [r for r in report.results if r.error]
    if failures:
        raise ClientFailure(f"{len(failures)} request(s) failed after retries: {failures[0].error}")
    return EXIT_OK


def cmd_genedges(args) -> int:
    cfg = _config(args)
    scene_path = _path(args, args.scene)
    graph, observations = load_scene(scene_path)
    if not graph.closed_edges():
        raise MissingEdges(f"scene {graph.scene_id!r} has no closed edges to replace")
    client = make_client(cfg.client, cfg, args, graph)
    outcome = generate_edges_for_graph(graph, observations or [], client, cfg.char_cap, cfg.outline)
    for e in outcome.generated:
        for flag in lint_generated_edge(e, cfg.outline):
            log.warning("review edge %d->%d %r: %s", e.target_id, e.anchor_id, e.text, flag)
    save_generated_edges(outcome.generated, _path(args, args.out_edges))
    save_scene(outcome.graph, _path(args, args.out_scene), read_manifest(scene_path))
    print(
        f"generated={len(outcome.generated)} no_image={len(outcome.skipped_no_image)} "
        f"failed={len(outcome.failed)} edges={len(outcome.graph.edges)}"
    )
    return EXIT_OK


def _report_ref(args, ref: str) -> RunReport:
    path, _, run_id = ref.partition("#")
    return load_report(_path(args, path), run_id or None)


def cmd_compare(args) -> int:
    run_a, run_b = _report_ref(args, args.run_a), _report_ref(args, args.run_b)
    table, result = compare_runs(run_a, run_b, args.method)
    name_a = args.name_a or f"{run_a.model}/{run_a.variant.value}"
    name_b = args.name_b or f"{run_b.model}/{run_b.variant.value}"
    text = format_comparison(name_a, name_b, table, result)
    print(text)
    if args.out:
        doc = {
            "run_a": run_a.run_id,
            "run_b": run_b.run_id,
            "table": {"a": table.a, "b": table.b, "c": table.c, "d": table.d},
            "method": result.method.value,
            "statistic": result.statistic,
            "p_value": result.p_value,
            "significance": result.significance,
        }
        atomic_write(_path(args, args.out), json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_experiment1(args) -> int:
    """G (random baseline), G_POS and G_EDGES over a list of scenes."""
    cfg = _config(args)
    out_dir = _path(args, args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs: dict[str, list] = {"g": [], "g_pos": [], "g_edges": []}
    expected_num = 0.0
    n_total = 0
    model = None
    for scene in args.scenes:
        graph, _ = load_scene(_path(args, scene))
        if args.statements:
            statements = _scene_statements(load_statements(_path(args, args.statements)), graph)
        else:
            statements = sample_synonym_statements(generate_statements(graph, cfg.synonyms), cfg.seed)
        if not statements:
            log.warning("scene %s: no statements, skipped", graph.scene_id)
            continue
        client = make_client(cfg.client, cfg, args, graph)
        model = client.name
        expected_num += random_baseline(graph, statements, "expected") * len(statements)
        n_total += len(statements)
        runs["g"] += random_baseline(graph, statements, "sampled", cfg.seed)
        for variant in (GraphVariant.G_POS, GraphVariant.G_EDGES):
            report = run_grounding(graph, statements, variant, client, cfg)
            runs[variant.value] += report.results
    if not n_total:
        raise ValidationError("no statements in any scene")

    reports = {}
    stamp = _timestamp()
    for key, results in runs.items():
        name = "random" if key == "g" else model
        rid = _run_id("experiment1", key, [r.statement.key() for r in results], cfg.snapshot())
        reports[key] = RunReport(rid, name, GraphVariant(key), results, stamp, cfg.snapshot())
        save_report(reports[key], out_dir / f"{key}.jsonl")

    lines = [f"{'':<14}{'graph':<10}{'accuracy':>10}", f"{'random':<14}{'G':<10}{expected_num / n_total:>10.4f}"]
    lines.append(f"{model:<14}{'G_pos':<10}{accuracy(runs['g_pos']):>10.4f}")
    lines.append(f"{'':<14}{'G_edges':<10}{accuracy(runs['g_edges']):>10.4f}")
    lines.append("")
    for a, b in (("g", "g_pos"), ("g", "g_edges"), ("g_pos", "g_edges")):
        table, res = compare_runs(reports[a], reports[b])
        lines.append(format_comparison(a.upper(), b.upper(), table, res))
    summary = "\n".join(lines) + "\n"
    atomic_write(out_dir / "summary.txt", summary)
    sys.stdout.write(summary)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=".", help="base directory for relative paths")
    common.add_argument("--config", help="toolkit config file (JSON)")
    common.add_argument("--seed", type=int)
    common.add_argument("--parallel", type=int, help="concurrent model requests")
    common.add_argument("--client", help="oracle | random | replay:PATH | http[:URL]")
    common.add_argument("--model", help="model name for the http client")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="relscene", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    variants = [v.value for v in GraphVariant]

    s = sub.add_parser("relate", parents=[common], help="compute geometric edges")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_relate)

    s = sub.add_parser("statements", parents=[common], help="generate referential statements")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_statements)

    s = sub.add_parser("serialize", parents=[common], help="print the serialized graph or full prompt")
    s.add_argument("--scene", required=True)
    s.add_argument("--variant", choices=variants, default="g_edges")
    s.add_argument("--statement")
    s.set_defaults(func=cmd_serialize)

    s = sub.add_parser("ground", parents=[common], help="ground statements with a model client")
    s.add_argument("--scene", required=True)
    s.add_argument("--statements", required=True)
    s.add_argument("--variant", choices=variants, default="g_edges")
    s.add_argument("--out", required=True, help="report file (appended)")
    s.add_argument("--run-id")
    s.set_defaults(func=cmd_ground)

    s = sub.add_parser("genedges", parents=[common], help="generate open-vocabulary edges from images")
    s.add_argument("--scene", required=True)
    s.add_argument("--out-edges", required=True)
    s.add_argument("--out-scene", required=True)
    s.set_defaults(func=cmd_genedges)

    s = sub.add_parser("compare", parents=[common], help="McNemar test between two runs")
    s.add_argument("run_a", help="REPORT_FILE[#RUN_ID]")
    s.add_argument("run_b", help="REPORT_FILE[#RUN_ID]")
    s.add_argument("--method", choices=["auto", "exact", "chi2"], default="auto")
    s.add_argument("--name-a")
    s.add_argument("--name-b")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("experiment1", parents=[common], help="G / G_pos / G_edges over scenes")
    s.add_argument("scenes", nargs="+")
    s.add_argument("--statements")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_experiment1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ClientFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CLIENT
    except ClientError as exc:
        print(f"error: model client failed: {exc}", file=sys.stderr)
        return EXIT_CLIENT
    except (ParseError, ValidationError, SceneError, MissingEdges, MismatchedRuns, IoError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
