"""Scene, statement, generated-edge and report files.

* scene: one JSON document (``format: relscene.scene``)
* statements / reports: JSON lines, the first line a format header
* generated edges: ``target|text|anchor|image_id`` lines

All writes go through a temp file and ``os.replace``; report files are
append-only and locked while written.
"""

from __future__ import annotations

import fcntl
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Sequence

from .evaluation import RunReport
from .grounding import GroundingResult
from .scene import ObjectNode, SceneError, SceneGraph, SpatialEdge, build_scene_graph
from .serialize import GraphVariant
from .statements import ReferentialStatement
from .vision import DEFAULT_CHAR_CAP, GeneratedEdge, Observation, load_observations

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
SCENE_FORMAT = "relscene.scene"
STATEMENTS_FORMAT = "relscene.statements"
REPORTS_FORMAT = "relscene.reports"
EDGES_HEADER = "# relscene.generated_edges v1: target|text|anchor|image_id"

_SCENE_KEYS = {"format", "version", "scene_id", "nodes", "edges", "observations"}
_NODE_KEYS = {"object_id", "class_label", "nyu_label", "color_labels", "center", "size"}
_EDGE_KEYS = {"target_id", "relation", "anchor_ids", "vocabulary", "provenance"}


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class IoError(OSError):
    pass


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _warn_unknown(where: str, data: dict, known: set) -> None:
    extra = sorted(set(data) - known)
    if extra:
        log.warning("%s: ignoring unknown field(s) %s", where, ", ".join(extra))


def _vec(where: str, value) -> tuple[float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 3 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ParseError(f"{where}: expected a list of 3 numbers, got {value!r}")
    return tuple(float(v) for v in value)  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------


def node_to_dict(n: ObjectNode) -> dict:
    return {
        "object_id": n.object_id,
        "class_label": n.class_label,
        "color_labels": list(n.color_labels),
        "center": list(n.center),
        "size": list(n.size),
    }


def edge_to_dict(e: SpatialEdge) -> dict:
    return {
        "target_id": e.target_id,
        "relation": e.relation,
        "anchor_ids": list(e.anchor_ids),
        "vocabulary": e.vocabulary.value,
        "provenance": e.provenance.value,
    }


def scene_to_dict(graph: SceneGraph, observations: Sequence[dict] | None = None) -> dict:
    doc = {
        "format": SCENE_FORMAT,
        "version": FORMAT_VERSION,
        "scene_id": graph.scene_id,
        "nodes": [node_to_dict(n) for n in graph.sorted_nodes()],
        "edges": [edge_to_dict(e) for e in graph.edges],
    }
    if observations:
        doc["observations"] = list(observations)
    return doc


def _parse_node(where: str, raw) -> ObjectNode:
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: expected an object")
    _warn_unknown(where, raw, _NODE_KEYS)
    label = raw.get("class_label", raw.get("nyu_label"))
    oid = raw.get("object_id")
    if not isinstance(oid, int) or isinstance(oid, bool):
        raise ParseError(f"{where}.object_id: expected an integer, got {oid!r}")
    if not isinstance(label, str):
        raise ParseError(f"{where}.class_label: expected a string, got {label!r}")
    colors = raw.get("color_labels", [])
    if isinstance(colors, str):
        colors = [colors]
    if not isinstance(colors, list) or not all(isinstance(c, str) for c in colors):
        raise ParseError(f"{where}.color_labels: expected a list of strings")
    center = _vec(f"{where}.center", raw.get("center"))
    size = _vec(f"{where}.size", raw.get("size"))
    try:
        return ObjectNode(oid, label, tuple(colors), center, size)
    except SceneError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _parse_edge(where: str, raw) -> SpatialEdge:
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: expected an object")
    _warn_unknown(where, raw, _EDGE_KEYS)
    try:
        anchors = raw["anchor_ids"]
        if isinstance(anchors, int):
            anchors = [anchors]
        return SpatialEdge(
            int(raw["target_id"]),
            str(raw["relation"]),
            tuple(int(a) for a in anchors),
            raw.get("vocabulary", "closed"),
            raw.get("provenance", "imported"),
        )
    except KeyError as exc:
        raise ParseError(f"{where}: missing field {exc}") from exc
    except SceneError as exc:
        raise ValidationError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from exc


def scene_from_dict(doc, where: str = "scene") -> tuple[SceneGraph, list[dict] | None]:
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected a JSON object at top level")
    _warn_unknown(where, doc, _SCENE_KEYS)
    fmt = doc.get("format", SCENE_FORMAT)
    if fmt != SCENE_FORMAT:
        raise ParseError(f"{where}: unsupported format {fmt!r}")
    if doc.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise ParseError(f"{where}: unsupported version {doc.get('version')!r}")
    if "scene_id" not in doc:
        raise ParseError(f"{where}: missing scene_id")
    nodes_raw = doc.get("nodes")
    if not isinstance(nodes_raw, list):
        raise ParseError(f"{where}.nodes: expected a list")
    edges_raw = doc.get("edges", [])
    if not isinstance(edges_raw, list):
        raise ParseError(f"{where}.edges: expected a list")
    nodes = [_parse_node(f"{where}.nodes[{i}]", r) for i, r in enumerate(nodes_raw)]
    edges = [_parse_edge(f"{where}.edges[{i}]", r) for i, r in enumerate(edges_raw)]
    try:
        graph = build_scene_graph(str(doc["scene_id"]), nodes, edges)
    except SceneError as exc:
        raise ValidationError(f"{where}: {exc}") from exc
    obs = doc.get("observations")
    if obs is not None and not isinstance(obs, list):
        raise ParseError(f"{where}.observations: expected a list")
    return graph, obs


def load_scene(path) -> tuple[SceneGraph, list[Observation] | None]:
    """Graph plus lazily-loaded observations (paths relative to the file)."""
    graph, manifest = scene_from_dict(_read_json(path), str(path))
    if manifest is None:
        return graph, None
    try:
        return graph, load_observations(manifest, Path(path).parent)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}.observations: {exc}") from exc


def read_manifest(path) -> list[dict] | None:
    doc = _read_json(path)
    return doc.get("observations") if isinstance(doc, dict) else None


def save_scene(graph: SceneGraph, path, observations: Sequence[dict] | None = None) -> None:
    atomic_write(path, json.dumps(scene_to_dict(graph, observations), indent=2) + "\n")


# ---------------------------------------------------------------------------
# statements
# ---------------------------------------------------------------------------


def statement_to_dict(st: ReferentialStatement) -> dict:
    e = st.source_edge
    return {
        "scene_id": st.scene_id,
        "target_id": st.target_id,
        "relation": e.relation,
        "anchors": list(e.anchor_ids),
        "text": st.text,
        "phrase": st.phrase,
        "disambiguators": list(st.disambiguators),
        "vocabulary": e.vocabulary.value,
        "provenance": e.provenance.value,
    }


def statement_from_dict(rec: dict) -> ReferentialStatement:
    edge = SpatialEdge(
        int(rec["target_id"]),
        rec["relation"],
        tuple(int(a) for a in rec["anchors"]),
        rec.get("vocabulary", "closed"),
        rec.get("provenance", "imported"),
    )
    return ReferentialStatement(
        text=rec["text"],
        scene_id=str(rec["scene_id"]),
        target_id=int(rec["target_id"]),
        source_edge=edge,
        disambiguators=tuple(rec.get("disambiguators", ())),
        phrase=rec.get("phrase", ""),
    )


def _jsonl_header(fmt: str) -> str:
    return json.dumps({"format": fmt, "version": FORMAT_VERSION})


def _iter_jsonl(path, fmt: str):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    with fh:
        first = True
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{n}:{exc.colno}: {exc.msg}") from exc
            if first:
                first = False
                if rec.get("format") != fmt:
                    raise ParseError(f"{path}:{n}: expected a {fmt} header, got {rec!r}")
                if rec.get("version") != FORMAT_VERSION:
                    raise ParseError(f"{path}:{n}: unsupported version {rec.get('version')!r}")
                continue
            yield n, rec
        if first:
            raise ParseError(f"{path}: empty file, missing {fmt} header")


def save_statements(statements: Sequence[ReferentialStatement], path) -> None:
    lines = [_jsonl_header(STATEMENTS_FORMAT)]
    lines += [json.dumps(statement_to_dict(st)) for st in statements]
    atomic_write(path, "\n".join(lines) + "\n")


def load_statements(path) -> list[ReferentialStatement]:
    out = []
    for n, rec in _iter_jsonl(path, STATEMENTS_FORMAT):
        try:
            out.append(statement_from_dict(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{n}: bad statement record: {exc!r}") from exc
    return out


# ---------------------------------------------------------------------------
# generated edges
# ---------------------------------------------------------------------------


def save_generated_edges(edges: Sequence[GeneratedEdge], path) -> None:
    atomic_write(path, "\n".join([EDGES_HEADER] + [e.to_line() for e in edges]) + "\n")


def load_generated_edges(path, char_cap: int = DEFAULT_CHAR_CAP) -> list[GeneratedEdge]:
    out = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            out.append(GeneratedEdge.from_line(line, char_cap))
        except ValueError as exc:
            raise ParseError(f"{path}:{n}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def result_to_dict(r: GroundingResult) -> dict:
    rec = statement_to_dict(r.statement)
    rec.update(
        predicted_id=r.predicted_id,
        raw_output=r.raw_output,
        valid_format=r.valid_format,
        correct=r.correct,
        parse_mode=r.parse_mode,
        error=r.error,
    )
    return rec


def result_from_dict(rec: dict) -> GroundingResult:
    return GroundingResult(
        statement_from_dict(rec),
        rec["predicted_id"],
        rec["raw_output"],
        bool(rec["valid_format"]),
        bool(rec["correct"]),
        rec.get("parse_mode", "strict"),
        rec.get("error"),
    )


def report_to_dict(report: RunReport) -> dict:
    return {
        "run_id": report.run_id,
        "model": report.model,
        "variant": GraphVariant(report.variant).value,
        "timestamp": report.timestamp,
        "config": report.config,
        "total": report.total,
        "correct": report.correct_count,
        "accuracy": report.accuracy if report.results else None,
        "results": [result_to_dict(r) for r in report.results],
    }


def report_from_dict(rec: dict) -> RunReport:
    return RunReport(
        run_id=rec["run_id"],
        model=rec["model"],
        variant=GraphVariant(rec["variant"]),
        results=[result_from_dict(r) for r in rec["results"]],
        timestamp=rec.get("timestamp"),
        config=rec.get("config", {}),
    )


@contextmanager
def _locked(path: Path):
    lock_path = path.with_name(path.name + ".lock")
    with open(lock_path, "a") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(lock, fcntl.LOCK_UN)


def load_reports(path) -> list[RunReport]:
    out = []
    for n, rec in _iter_jsonl(path, REPORTS_FORMAT):
        try:
            out.append(report_from_dict(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{n}: bad report record: {exc!r}") from exc
    return out


def load_report(path, run_id: str | None = None) -> RunReport:
    reports = load_reports(path)
    if run_id is None:
        if len(reports) != 1:
            raise ParseError(f"{path}: holds {len(reports)} reports, pass a run_id")
        return reports[0]
    for r in reports:
        if r.run_id == run_id:
            return r
    raise ParseError(f"{path}: no report with run_id {run_id!r}")


def save_report(report: RunReport, path) -> None:
    """Append ``report``; refuses a run_id already present in the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _locked(path):
        existing = path.read_text(encoding="utf-8") if path.exists() else ""
        if existing:
            ids = {r.run_id for r in load_reports(path)}
            if report.run_id in ids:
                raise IoError(f"{path}: run_id {report.run_id!r} already recorded")
        else:
            existing = _jsonl_header(REPORTS_FORMAT) + "\n"
        atomic_write(path, existing + json.dumps(report_to_dict(report)) + "\n")
