"""Scene-graph data model: object nodes, spatial edges, validated graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

BETWEEN = "between"


class SceneError(ValueError):
    """Base class for scene-graph validation failures."""


class InvalidNode(SceneError):
    pass


class DuplicateId(SceneError):
    pass


class DanglingEdge(SceneError):
    pass


class SelfEdge(SceneError):
    pass


class BadArity(SceneError):
    pass


class DuplicateEdge(SceneError):
    pass


class Vocabulary(str, Enum):
    CLOSED = "closed"
    OPEN = "open"


class Provenance(str, Enum):
    GEOMETRIC = "geometric"
    VLM_GENERATED = "vlm_generated"
    IMPORTED = "imported"


def _vec3(value, name: str) -> tuple[float, float, float]:
    vals = tuple(float(v) for v in value)
    if len(vals) != 3:
        raise InvalidNode(f"{name} must have 3 components, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise InvalidNode(f"{name} must be finite, got {vals}")
    return vals  # type: ignore[return-value]


@dataclass(frozen=True)
class ObjectNode:
    """One object: id, class label, colors and an axis-aligned box (z-up)."""

    object_id: int
    class_label: str
    color_labels: tuple[str, ...] = ()
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if isinstance(self.object_id, bool) or int(self.object_id) != self.object_id or self.object_id < 0:
            raise InvalidNode(f"object_id must be a non-negative integer, got {self.object_id!r}")
        object.__setattr__(self, "object_id", int(self.object_id))
        if not self.class_label or not self.class_label.strip():
            raise InvalidNode(f"node {self.object_id}: empty class_label")
        object.__setattr__(self, "class_label", self.class_label.strip().lower())
        object.__setattr__(self, "color_labels", tuple(c.strip().lower() for c in self.color_labels))
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        size = _vec3(self.size, "size")
        if min(size) <= 0:
            raise InvalidNode(f"node {self.object_id}: size components must be > 0, got {size}")
        object.__setattr__(self, "size", size)

    @property
    def color(self) -> str | None:
        """Canonical color (first entry), or None."""
        return self.color_labels[0] if self.color_labels else None

    @property
    def bbox_min(self) -> tuple[float, float, float]:
        return tuple(c - s / 2.0 for c, s in zip(self.center, self.size))  # type: ignore[return-value]

    @property
    def bbox_max(self) -> tuple[float, float, float]:
        return tuple(c + s / 2.0 for c, s in zip(self.center, self.size))  # type: ignore[return-value]

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]


@dataclass(frozen=True)
class SpatialEdge:
    """Relation of ``target_id`` to one anchor, or two for ``between``.

    Anchors of ``between`` are stored ascending so that both anchor orders
    describe the same edge.
    """

    target_id: int
    relation: str
    anchor_ids: tuple[int, ...]
    vocabulary: Vocabulary = Vocabulary.CLOSED
    provenance: Provenance = Provenance.GEOMETRIC

    def __post_init__(self):
        anchors = tuple(int(a) for a in self.anchor_ids)
        vocab = Vocabulary(self.vocabulary)
        relation = self.relation.strip()
        if not relation:
            raise BadArity("edge relation must be non-empty")
        if vocab is Vocabulary.CLOSED:
            relation = relation.lower()
            expected = 2 if relation == BETWEEN else 1
        else:
            expected = 1
        if len(anchors) != expected:
            raise BadArity(
                f"edge {self.target_id}|{relation}: expected {expected} anchor(s), got {len(anchors)}"
            )
        if len(set(anchors)) != len(anchors):
            raise BadArity(f"edge {self.target_id}|{relation}: repeated anchor {anchors}")
        if int(self.target_id) in anchors:
            raise SelfEdge(f"edge {self.target_id}|{relation}|{anchors}: target is its own anchor")
        if vocab is Vocabulary.CLOSED and relation == BETWEEN:
            anchors = tuple(sorted(anchors))
        object.__setattr__(self, "target_id", int(self.target_id))
        object.__setattr__(self, "relation", relation)
        object.__setattr__(self, "anchor_ids", anchors)
        object.__setattr__(self, "vocabulary", vocab)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def is_closed(self) -> bool:
        return self.vocabulary is Vocabulary.CLOSED

    @property
    def pair(self) -> tuple[int, ...]:
        """``(target, anchor...)`` ids, ignoring the relation."""
        return (self.target_id, *self.anchor_ids)

    def sort_key(self):
        return (self.target_id, self.relation, self.anchor_ids)


@dataclass(frozen=True)
class ClassGroup:
    class_label: str
    member_ids: frozenset[int]


@dataclass(frozen=True)
class SceneGraph:
    """Immutable scene graph. Construct through :func:`build_scene_graph`."""

    scene_id: str
    nodes: tuple[ObjectNode, ...]
    edges: tuple[SpatialEdge, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "_index", {n.object_id: n for n in self.nodes})

    def node(self, object_id: int) -> ObjectNode:
        return self._index[object_id]

    def __contains__(self, object_id) -> bool:
        return object_id in self._index

    @property
    def ids(self) -> list[int]:
        return sorted(self._index)

    def sorted_nodes(self) -> list[ObjectNode]:
        return sorted(self.nodes, key=lambda n: n.object_id)

    def closed_edges(self) -> list[SpatialEdge]:
        return [e for e in self.edges if e.is_closed]

    def with_edges(self, edges: Iterable[SpatialEdge]) -> "SceneGraph":
        return build_scene_graph(self.scene_id, list(self.nodes), list(edges))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(ids, centers, sizes)`` for the nodes sorted by id."""
        nodes = self.sorted_nodes()
        ids = np.array([n.object_id for n in nodes], dtype=np.int64)
        centers = np.array([n.center for n in nodes], dtype=np.float64).reshape(-1, 3)
        sizes = np.array([n.size for n in nodes], dtype=np.float64).reshape(-1, 3)
        return ids, centers, sizes


def build_scene_graph(
    scene_id: str, nodes: Sequence[ObjectNode], edges: Sequence[SpatialEdge] = ()
) -> SceneGraph:
    """Validate nodes and edges and return an immutable graph.

    Raises DuplicateId, DanglingEdge, SelfEdge, BadArity or DuplicateEdge
    before anything is constructed.
    """
    seen: set[int] = set()
    for n in nodes:
        if n.object_id in seen:
            raise DuplicateId(f"scene {scene_id!r}: duplicate object_id {n.object_id}")
        seen.add(n.object_id)

    triples: set = set()
    for e in edges:
        for ref in e.pair:
            if ref not in seen:
                raise DanglingEdge(
                    f"scene {scene_id!r}: edge {e.target_id}|{e.relation}|{e.anchor_ids} "
                    f"references missing object {ref}"
                )
        if e.is_closed:
            key = e.sort_key()
            if key in triples:
                raise DuplicateEdge(f"scene {scene_id!r}: duplicate edge {key}")
            triples.add(key)

    return SceneGraph(str(scene_id), tuple(nodes), tuple(edges))


def class_groups(graph: SceneGraph) -> list[ClassGroup]:
    """Partition the nodes by class label, ordered by label."""
    members: dict[str, set[int]] = {}
    for n in graph.nodes:
        members.setdefault(n.class_label, set()).add(n.object_id)
    return [ClassGroup(label, frozenset(ids)) for label, ids in sorted(members.items())]
