"""Closed-vocabulary spatial relations derived from axis-aligned boxes.

Predicates, for ``a`` relative to ``b`` (``eps`` = contact tolerance):

* above: ``a.min_z >= b.max_z - eps`` and the horizontal footprints overlap
  by at least ``overlap_fraction`` of the smaller footprint. below is the
  inverse.
* on: above and ``a.min_z - b.max_z <= eps``. under is the inverse.
* in: ``a``'s box lies inside ``b``'s box grown by ``eps`` on every side.
* near: horizontal centroid distance at most
  ``near_factor * (half_diag_a + half_diag_b)``, and neither box is stacked
  on (above/below) or contained in the other. Symmetric.
* between: the target's horizontal center projects strictly inside the
  segment joining the anchors' centers, within
  ``between_corridor_factor * mean(anchor horizontal diagonals)`` of it.
* closest / farthest: 3D centroid distance, ties to the lower anchor id.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from . import kernels
from .scene import BETWEEN, ObjectNode, Provenance, SceneGraph, SpatialEdge


class RelationCategory(str, Enum):
    BINARY = "binary"
    ORDERED = "ordered"
    TERNARY = "ternary"


RELATION_CATEGORIES: dict[str, RelationCategory] = {
    "above": RelationCategory.BINARY,
    "below": RelationCategory.BINARY,
    "on": RelationCategory.BINARY,
    "under": RelationCategory.BINARY,
    "near": RelationCategory.BINARY,
    "in": RelationCategory.BINARY,
    "closest": RelationCategory.ORDERED,
    "farthest": RelationCategory.ORDERED,
    BETWEEN: RelationCategory.TERNARY,
}

INVERSE = {"above": "below", "below": "above", "on": "under", "under": "on", "near": "near"}


@dataclass(frozen=True)
class RelationConfig:
    contact_epsilon: float = 0.05
    near_factor: float = 1.0
    overlap_fraction: float = 0.25
    between_corridor_factor: float = 0.5
    excluded_relations: frozenset[str] = field(default_factory=lambda: frozenset({"closest", "farthest"}))

    def __post_init__(self):
        if self.contact_epsilon < 0:
            raise ValueError("contact_epsilon must be >= 0")
        if self.near_factor <= 0:
            raise ValueError("near_factor must be > 0")
        if not 0 < self.overlap_fraction <= 1:
            raise ValueError("overlap_fraction must lie in (0, 1]")
        if self.between_corridor_factor < 0:
            raise ValueError("between_corridor_factor must be >= 0")
        object.__setattr__(self, "excluded_relations", frozenset(self.excluded_relations))

    @classmethod
    def from_dict(cls, data: dict) -> "RelationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown relation config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "excluded_relations" in kwargs:
            kwargs["excluded_relations"] = frozenset(kwargs["excluded_relations"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "contact_epsilon": self.contact_epsilon,
            "near_factor": self.near_factor,
            "overlap_fraction": self.overlap_fraction,
            "between_corridor_factor": self.between_corridor_factor,
            "excluded_relations": sorted(self.excluded_relations),
        }


def _pair_arrays(a: ObjectNode, b: ObjectNode):
    return np.array([a.center, b.center]), np.array([a.size, b.size])


def binary_relations(a: ObjectNode, b: ObjectNode, cfg: RelationConfig | None = None) -> set[str]:
    """Binary relation tokens holding for ``a`` relative to ``b``."""
    cfg = cfg or RelationConfig()
    if a.object_id == b.object_id:
        raise ValueError("binary_relations needs two distinct objects")
    centers, sizes = _pair_arrays(a, b)
    above, on, inside, near = kernels.binary_masks(
        centers, sizes, cfg.contact_epsilon, cfg.near_factor, cfg.overlap_fraction
    )
    out = set()
    if above[0, 1]:
        out.add("above")
    if above[1, 0]:
        out.add("below")
    if on[0, 1]:
        out.add("on")
    if on[1, 0]:
        out.add("under")
    if inside[0, 1]:
        out.add("in")
    if near[0, 1]:
        out.add("near")
    return out - cfg.excluded_relations


def ordered_relations(
    target: ObjectNode, others: list[ObjectNode], cfg: RelationConfig | None = None
) -> list[SpatialEdge]:
    cfg = cfg or RelationConfig()
    if not others:
        raise ValueError("ordered_relations needs at least one other object")
    wanted = [t for t in ("closest", "farthest") if t not in cfg.excluded_relations]
    if not wanted:
        return []
    pool = sorted((o for o in others if o.object_id != target.object_id), key=lambda o: o.object_id)
    closest, farthest = kernels.extrema(np.array([target.center] + [o.center for o in pool]))
    picks = {"closest": pool[closest[0] - 1], "farthest": pool[farthest[0] - 1]}
    return [
        SpatialEdge(target.object_id, tok, (picks[tok].object_id,), provenance=Provenance.GEOMETRIC)
        for tok in wanted
    ]


def ternary_between(
    target: ObjectNode, a1: ObjectNode, a2: ObjectNode, cfg: RelationConfig | None = None
) -> SpatialEdge | None:
    cfg = cfg or RelationConfig()
    if len({target.object_id, a1.object_id, a2.object_id}) != 3:
        raise ValueError("ternary_between needs three distinct objects")
    if BETWEEN in cfg.excluded_relations:
        return None
    lo, hi = sorted((a1, a2), key=lambda n: n.object_id)
    centers = np.array([target.center, lo.center, hi.center])
    sizes = np.array([target.size, lo.size, hi.size])
    triples = kernels.between(centers, sizes, cfg.between_corridor_factor)
    if not (len(triples) and np.any(triples[:, 0] == 0)):
        return None
    return SpatialEdge(target.object_id, BETWEEN, (lo.object_id, hi.object_id), provenance=Provenance.GEOMETRIC)


def compute_relations(graph: SceneGraph, cfg: RelationConfig | None = None) -> list[SpatialEdge]:
    """All geometric edges of ``graph``, sorted by (target, relation, anchors)."""
    cfg = cfg or RelationConfig()
    ids, centers, sizes = graph.arrays()
    n = len(ids)
    if n < 2:
        return []
    excluded = cfg.excluded_relations
    edges: list[SpatialEdge] = []

    def emit(t, rel, anchors):
        if rel not in excluded:
            edges.append(SpatialEdge(int(t), rel, tuple(int(a) for a in anchors), provenance=Provenance.GEOMETRIC))

    above, on, inside, near = kernels.binary_masks(
        centers, sizes, cfg.contact_epsilon, cfg.near_factor, cfg.overlap_fraction
    )
    for rel, mat in (("above", above), ("below", above.T), ("on", on), ("under", on.T), ("in", inside), ("near", near)):
        if rel in excluded:
            continue
        for i, j in zip(*np.nonzero(mat)):
            emit(ids[i], rel, (ids[j],))

    if not {"closest", "farthest"} <= excluded:
        closest, farthest = kernels.extrema(centers)
        for i in range(n):
            emit(ids[i], "closest", (ids[closest[i]],))
            emit(ids[i], "farthest", (ids[farthest[i]],))

    if BETWEEN not in excluded and n >= 3:
        for t, i, j in kernels.between(centers, sizes, cfg.between_corridor_factor):
            emit(ids[t], BETWEEN, (ids[i], ids[j]))

    edges.sort(key=SpatialEdge.sort_key)
    return edges
