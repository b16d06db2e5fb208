"""Compact text rendering of scene graphs for language-model prompts.

Layout::

    OBJECTS:
    12|chair|colors=brown|center=(1.20,0.50,0.45)|size=(0.50,0.50,0.90)
    EDGES:
    12|on|7
    3|between|5 and 9
"""

from __future__ import annotations

import re
from enum import Enum

from .scene import BETWEEN, ObjectNode, SceneGraph, SpatialEdge, Vocabulary

OBJECTS_HEADER = "OBJECTS:"
EDGES_HEADER = "EDGES:"


class MissingEdges(ValueError):
    pass


class GraphVariant(str, Enum):
    G = "g"
    G_POS = "g_pos"
    G_EDGES = "g_edges"
    G_GENEDGES = "g_genedges"

    @property
    def has_attributes(self) -> bool:
        return self is not GraphVariant.G

    @property
    def has_edges(self) -> bool:
        return self in (GraphVariant.G_EDGES, GraphVariant.G_GENEDGES)


def _fmt(x: float) -> str:
    return f"{round(x, 2) + 0.0:.2f}"


def _triple(v) -> str:
    return "(" + ",".join(_fmt(x) for x in v) + ")"


def serialize_node(node: ObjectNode, variant: GraphVariant = GraphVariant.G_POS) -> str:
    variant = GraphVariant(variant)
    line = f"{node.object_id}|{node.class_label}"
    if not variant.has_attributes:
        return line
    colors = ",".join(node.color_labels) if node.color_labels else "-"
    return f"{line}|colors={colors}|center={_triple(node.center)}|size={_triple(node.size)}"


def serialize_edge(edge: SpatialEdge) -> str:
    if edge.is_closed and edge.relation == BETWEEN:
        lo, hi = sorted(edge.anchor_ids)
        return f"{edge.target_id}|{BETWEEN}|{lo} and {hi}"
    return f"{edge.target_id}|{edge.relation}|{edge.anchor_ids[0]}"


def serialize_graph(graph: SceneGraph, variant: GraphVariant) -> str:
    variant = GraphVariant(variant)
    lines = [OBJECTS_HEADER]
    lines += [serialize_node(n, variant) for n in graph.sorted_nodes()]
    if variant.has_edges:
        if not graph.edges:
            raise MissingEdges(f"variant {variant.value} needs edges but scene {graph.scene_id!r} has none")
        lines.append(EDGES_HEADER)
        lines += [serialize_edge(e) for e in sorted(graph.edges, key=SpatialEdge.sort_key)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TRIPLE = r"\((-?\d+\.\d+),(-?\d+\.\d+),(-?\d+\.\d+)\)"
_NODE_RE = re.compile(rf"^(\d+)\|([^|]+?)(?:\|colors=([^|]*)\|center={_TRIPLE}\|size={_TRIPLE})?$")
_BETWEEN_ANCHORS = re.compile(r"^(\d+) and (\d+)$")

CLOSED_TOKENS = frozenset({"above", "below", "on", "under", "near", "in", "closest", "farthest", BETWEEN})


class SerializationParseError(ValueError):
    pass


def parse_node_line(line: str) -> ObjectNode:
    m = _NODE_RE.match(line.strip())
    if not m:
        raise SerializationParseError(f"bad node line: {line!r}")
    oid, label, colors = int(m.group(1)), m.group(2), m.group(3)
    if colors is None:
        return ObjectNode(oid, label)
    color_labels = () if colors in ("", "-") else tuple(colors.split(","))
    nums = [float(x) for x in m.groups()[3:]]
    return ObjectNode(oid, label, color_labels, tuple(nums[:3]), tuple(nums[3:]))


def parse_edge_line(line: str) -> SpatialEdge:
    line = line.strip()
    first, last = line.find("|"), line.rfind("|")
    if first <= 0 or last == first:
        raise SerializationParseError(f"bad edge line: {line!r}")
    try:
        target = int(line[:first])
        relation, anchors = line[first + 1 : last], line[last + 1 :]
        m = _BETWEEN_ANCHORS.match(anchors)
        if relation == BETWEEN and m:
            return SpatialEdge(target, BETWEEN, (int(m.group(1)), int(m.group(2))), provenance="imported")
        vocab = Vocabulary.CLOSED if relation in CLOSED_TOKENS else Vocabulary.OPEN
        return SpatialEdge(target, relation, (int(anchors),), vocabulary=vocab, provenance="imported")
    except ValueError as exc:
        raise SerializationParseError(f"bad edge line: {line!r}: {exc}") from exc


def parse_serialized_graph(text: str) -> tuple[list[ObjectNode], list[SpatialEdge]]:
    """Inverse of :func:`serialize_graph` (coordinates at 2 decimals)."""
    nodes, edges = [], []
    section = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line == OBJECTS_HEADER:
            section = nodes
        elif line == EDGES_HEADER:
            section = edges
        elif section is nodes:
            nodes.append(parse_node_line(line))
        elif section is edges:
            edges.append(parse_edge_line(line))
        else:
            raise SerializationParseError(f"line outside any section: {line!r}")
    return nodes, edges
