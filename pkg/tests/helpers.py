"""Random scene generation and brute-force oracles shared by the tests.

The oracles are written straight from the predicate definitions and avoid
the package's kernels: shapely for footprint overlap, cross products for
distances to the between-segment, plain loops everywhere else.
"""

import itertools
import math

import numpy as np
from shapely.geometry import box

from relscene.scene import ObjectNode, build_scene_graph

LABELS = ["chair", "table", "cabinet", "lamp", "bed", "coffee table", "nightstand", "cup", "box"]
COLORS = ["brown", "white", "black", "red", "blue", "grey"]


def random_nodes(rng: np.random.Generator, n: int, start_id: int = 0):
    nodes = []
    for k in range(n):
        oid = start_id + 3 * k + int(rng.integers(0, 3))
        label = LABELS[int(rng.integers(0, len(LABELS)))]
        n_colors = int(rng.integers(0, 3))
        colors = tuple(COLORS[int(i)] for i in rng.choice(len(COLORS), n_colors, replace=False))
        size = rng.uniform([0.2, 0.2, 0.2], [1.5, 1.5, 1.2])
        roll = rng.random()
        if nodes and roll < 0.3:
            base = nodes[int(rng.integers(0, len(nodes)))]
            top = base.center[2] + base.size[2] / 2
            xy = np.array(base.center[:2]) + rng.normal(0, 0.25, 2)
            center = (xy[0], xy[1], top + rng.uniform(0, 0.08) + size[2] / 2)
        elif nodes and roll < 0.4:
            base = nodes[int(rng.integers(0, len(nodes)))]
            size = np.array(base.size) * rng.uniform(0.2, 0.7, 3)
            slack = (np.array(base.size) - size) / 2
            center = tuple(np.array(base.center) + rng.uniform(-1, 1, 3) * slack * 0.9)
        else:
            xy = rng.uniform(0, 6, 2)
            center = (xy[0], xy[1], size[2] / 2 + rng.uniform(0, 0.02))
        nodes.append(ObjectNode(oid, label, colors, tuple(center), tuple(size)))
    return nodes


def random_scene(rng: np.random.Generator, n: int, scene_id: str = "rand"):
    return build_scene_graph(scene_id, random_nodes(rng, n))


# ---------------------------------------------------------------------------
# relation oracle
# ---------------------------------------------------------------------------


def _bounds(n):
    lo = [c - s / 2 for c, s in zip(n.center, n.size)]
    hi = [c + s / 2 for c, s in zip(n.center, n.size)]
    return lo, hi


class _Box:
    def __init__(self, node):
        self.node = node
        self.lo, self.hi = _bounds(node)
        self.foot = box(self.lo[0], self.lo[1], self.hi[0], self.hi[1])
        self.half_diag = math.hypot(node.size[0], node.size[1]) / 2


def _pair_relations(x, y, eps, near_factor, overlap_fraction):
    overlap = x.foot.intersection(y.foot).area
    enough = overlap >= overlap_fraction * min(x.foot.area, y.foot.area)

    def above(p, q):
        return p.lo[2] >= q.hi[2] - eps and enough

    def on(p, q):
        return above(p, q) and p.lo[2] - q.hi[2] <= eps

    def inside(p, q):
        return all(p.lo[k] >= q.lo[k] - eps and p.hi[k] <= q.hi[k] + eps for k in range(3))

    rels = set()
    if above(x, y):
        rels.add("above")
    if above(y, x):
        rels.add("below")
    if on(x, y):
        rels.add("on")
    if on(y, x):
        rels.add("under")
    if inside(x, y):
        rels.add("in")
    stacked = above(x, y) or above(y, x) or inside(x, y) or inside(y, x)
    reach = near_factor * (x.half_diag + y.half_diag)
    if not stacked and math.dist(x.node.center[:2], y.node.center[:2]) <= reach:
        rels.add("near")
    return rels


def oracle_binary(a, b, eps=0.05, near_factor=1.0, overlap_fraction=0.25):
    return _pair_relations(_Box(a), _Box(b), eps, near_factor, overlap_fraction)


def oracle_between(t, a1, a2, corridor=0.5):
    ax, ay = a1.center[:2]
    bx, by = a2.center[:2]
    px, py = t.center[:2]
    dx, dy = bx - ax, by - ay
    length = math.hypot(dx, dy)
    if length == 0:
        return False
    along = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    if not 0 < along < 1:
        return False
    perp = abs(dx * (py - ay) - dy * (px - ax)) / length
    width = corridor * (math.hypot(*a1.size[:2]) + math.hypot(*a2.size[:2])) / 2
    return perp <= width


def oracle_relations(graph, eps=0.05, near_factor=1.0, overlap_fraction=0.25, corridor=0.5, ordered=False):
    """Set of (target, relation, anchors) triples by exhaustive enumeration."""
    nodes = sorted(graph.nodes, key=lambda n: n.object_id)
    boxes = [_Box(n) for n in nodes]
    out = set()
    for x, y in itertools.permutations(boxes, 2):
        for r in _pair_relations(x, y, eps, near_factor, overlap_fraction):
            out.add((x.node.object_id, r, (y.node.object_id,)))
    for t in nodes:
        for a1, a2 in itertools.combinations([n for n in nodes if n is not t], 2):
            if oracle_between(t, a1, a2, corridor):
                out.add((t.object_id, "between", tuple(sorted((a1.object_id, a2.object_id)))))
    if ordered:
        for t in nodes:
            others = [(math.dist(t.center, o.center), o.object_id) for o in nodes if o is not t]
            if others:
                out.add((t.object_id, "closest", (min(others)[1],)))
                out.add((t.object_id, "farthest", (max(others, key=lambda d: (d[0], -d[1]))[1],)))
    return out


# ---------------------------------------------------------------------------
# statement matcher oracle
# ---------------------------------------------------------------------------


def oracle_size_word(graph, node):
    vols = sorted(m.size[0] * m.size[1] * m.size[2] for m in graph.nodes if m.class_label == node.class_label)
    if len(vols) < 2:
        return None
    mid = len(vols) // 2
    median = vols[mid] if len(vols) % 2 else (vols[mid - 1] + vols[mid]) / 2
    v = node.size[0] * node.size[1] * node.size[2]
    return "small" if v < median else "large" if v > median else None


def oracle_match_count(graph, relations, label, color, size, tokens, anchor_descs):
    """Number of nodes satisfying class, color, size word and an edge to
    anchors matching ``anchor_descs`` (list of (label, color|None))."""

    def anchor_ok(oid, desc):
        n = graph.node(oid)
        return n.class_label == desc[0] and (desc[1] is None or n.color == desc[1])

    count = 0
    for x in graph.nodes:
        if x.class_label != label:
            continue
        if color is not None and x.color != color:
            continue
        if size is not None and oracle_size_word(graph, x) != size:
            continue
        hit = False
        for e in relations:
            if e.target_id != x.object_id or e.relation not in tokens or len(e.anchor_ids) != len(anchor_descs):
                continue
            for perm in itertools.permutations(e.anchor_ids):
                if all(anchor_ok(o, d) for o, d in zip(perm, anchor_descs)):
                    hit = True
        count += hit
    return count
