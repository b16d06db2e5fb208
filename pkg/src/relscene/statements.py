"""Templated referential statements with color/size disambiguation.

Template: ``the [color] [size] <label> that is <phrase> the <anchor>``, with
``between`` rendered as ``... between the <anchor1> and the <anchor2>``.
An anchor carries its color only when its class occurs more than once.
"""

from __future__ import annotations

import random
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .scene import BETWEEN, SceneGraph, SpatialEdge

COLOR = "color"
SIZE = "size"
SIZE_WORDS = ("small", "large")

DEFAULT_SYNONYMS: dict[str, tuple[str, ...]] = {
    "above": ("above", "over"),
    "below": ("below", "under", "beneath"),
    "on": ("on", "on top of"),
    "under": ("under", "underneath"),
    "near": ("near", "next to", "close to"),
    "in": ("in", "inside"),
    "between": ("between",),
    "closest": ("closest to",),
    "farthest": ("farthest from",),
}


class UnknownEdge(KeyError):
    pass


class StatementParseError(ValueError):
    """Text does not follow the statement template."""


@dataclass(frozen=True)
class SynonymTable:
    """Relation token -> surface phrases; the first phrase is the canonical one."""

    phrases: Mapping[str, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_SYNONYMS))

    def __post_init__(self):
        table = {}
        for token, words in self.phrases.items():
            words = tuple(words)
            if not words:
                raise ValueError(f"synonym list for {token!r} is empty")
            table[token] = words
        object.__setattr__(self, "phrases", table)

    def __getitem__(self, token: str) -> tuple[str, ...]:
        return self.phrases[token]

    def __contains__(self, token) -> bool:
        return token in self.phrases

    def tokens_for(self, phrase: str) -> frozenset[str]:
        """Every relation token that ``phrase`` can express."""
        return frozenset(t for t, words in self.phrases.items() if phrase in words)

    def all_phrases(self) -> list[str]:
        return sorted({w for words in self.phrases.values() for w in words}, key=lambda w: (-len(w), w))


@dataclass(frozen=True)
class Description:
    """What a noun phrase pins down: class plus optional color and size word."""

    label: str
    color: str | None = None
    size: str | None = None

    def render(self) -> str:
        return " ".join(w for w in (self.color, self.size, self.label) if w)


@dataclass(frozen=True)
class ReferentialStatement:
    text: str
    scene_id: str
    target_id: int
    source_edge: SpatialEdge
    disambiguators: tuple[str, ...] = ()
    phrase: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("statement text is empty")
        if self.target_id != self.source_edge.target_id:
            raise ValueError("target_id must equal source_edge.target_id")
        if not self.phrase:
            object.__setattr__(self, "phrase", self.source_edge.relation)

    def key(self) -> tuple:
        e = self.source_edge
        return (self.scene_id, self.target_id, e.relation, e.anchor_ids, self.text)


# ---------------------------------------------------------------------------
# descriptions and matching
# ---------------------------------------------------------------------------


def _size_words(graph: SceneGraph) -> dict[int, str | None]:
    vols: dict[str, list[float]] = {}
    for n in graph.nodes:
        vols.setdefault(n.class_label, []).append(n.volume)
    medians = {label: statistics.median(v) for label, v in vols.items() if len(v) > 1}
    out = {}
    for n in graph.nodes:
        med = medians.get(n.class_label)
        if med is None or n.volume == med:
            out[n.object_id] = None
        else:
            out[n.object_id] = "small" if n.volume < med else "large"
    return out


def size_word(graph: SceneGraph, object_id: int) -> str | None:
    """``small``/``large`` against the in-scene median volume of the class."""
    return _size_words(graph)[object_id]


class Matcher:
    """Indexes a graph and an edge list for repeated statement matching."""

    def __init__(self, graph: SceneGraph, relations: Iterable[SpatialEdge]):
        self.graph = graph
        self.size_words = _size_words(graph)
        self.class_counts: dict[str, int] = {}
        for n in graph.nodes:
            self.class_counts[n.class_label] = self.class_counts.get(n.class_label, 0) + 1
        self.anchors_of: dict[tuple[str, int], set[tuple[int, ...]]] = {}
        for e in relations:
            if e.is_closed:
                self.anchors_of.setdefault((e.relation, e.target_id), set()).add(e.anchor_ids)

    def matches(self, object_id: int, desc: Description) -> bool:
        node = self.graph.node(object_id)
        if node.class_label != desc.label:
            return False
        if desc.color is not None and node.color != desc.color:
            return False
        if desc.size is not None and self.size_words[object_id] != desc.size:
            return False
        return True

    def matching(self, desc: Description) -> list[int]:
        return [n.object_id for n in self.graph.nodes if self.matches(n.object_id, desc)]

    def describe_target(self, object_id: int, disambiguators: Iterable[str]) -> Description:
        node = self.graph.node(object_id)
        wanted = set(disambiguators)
        color = node.color if COLOR in wanted else None
        size = self.size_words[object_id] if SIZE in wanted else None
        if COLOR in wanted and color is None:
            raise ValueError(f"object {object_id} has no color")
        if SIZE in wanted and size is None:
            raise ValueError(f"object {object_id} has no size word")
        return Description(node.class_label, color, size)

    def describe_anchor(self, object_id: int) -> Description:
        node = self.graph.node(object_id)
        ambiguous = self.class_counts[node.class_label] > 1
        return Description(node.class_label, node.color if ambiguous else None)

    def candidates(self, target: Description, tokens: Iterable[str], anchors: Sequence[Description]) -> list[int]:
        """Ids whose description and some edge agree with the statement parts."""
        anchor_sets = [set(self.matching(a)) for a in anchors]
        found = []
        for x in self.matching(target):
            for tok in tokens:
                have = self.anchors_of.get((tok, x))
                if not have:
                    continue
                if len(anchors) == 1:
                    hit = any(len(a) == 1 and a[0] in anchor_sets[0] for a in have)
                else:
                    hit = any(
                        tuple(sorted((p, q))) in have
                        for p in anchor_sets[0]
                        for q in anchor_sets[1]
                        if p != q
                    )
                if hit:
                    found.append(x)
                    break
        return sorted(found)


def matches(graph: SceneGraph, object_id: int, desc: Description) -> bool:
    return Matcher(graph, ()).matches(object_id, desc)


def describe_target(graph: SceneGraph, object_id: int, disambiguators: Iterable[str]) -> Description:
    return Matcher(graph, ()).describe_target(object_id, disambiguators)


def describe_anchor(graph: SceneGraph, object_id: int) -> Description:
    return Matcher(graph, ()).describe_anchor(object_id)


def candidates(
    graph: SceneGraph,
    target: Description,
    tokens: Iterable[str],
    anchors: Sequence[Description],
    relations: Iterable[SpatialEdge],
) -> list[int]:
    return Matcher(graph, relations).candidates(target, tokens, anchors)


def render(target: Description, phrase: str, anchors: Sequence[Description]) -> str:
    if len(anchors) == 2:
        tail = f"the {anchors[0].render()} and the {anchors[1].render()}"
    else:
        tail = f"the {anchors[0].render()}"
    return f"the {target.render()} that is {phrase} {tail}"


def is_ambiguous(
    statement: ReferentialStatement,
    graph: SceneGraph,
    relations: Sequence[SpatialEdge],
    synonyms: SynonymTable | None = None,
) -> bool:
    """True when more than one object fits the statement's class,
    disambiguators, relation phrase and anchor descriptions."""
    if statement.source_edge not in relations:
        raise UnknownEdge(f"edge {statement.source_edge.sort_key()} not among the given relations")
    synonyms = synonyms or SynonymTable()
    m = Matcher(graph, relations)
    target = m.describe_target(statement.target_id, statement.disambiguators)
    anchors = [m.describe_anchor(a) for a in statement.source_edge.anchor_ids]
    tokens = synonyms.tokens_for(statement.phrase) or frozenset({statement.source_edge.relation})
    return len(m.candidates(target, tokens, anchors)) > 1


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _disambiguator_ladder(m: Matcher, object_id: int) -> list[tuple[str, ...]]:
    ladder: list[tuple[str, ...]] = [()]
    current: tuple[str, ...] = ()
    if m.graph.node(object_id).color is not None:
        current = (COLOR,)
        ladder.append(current)
    if m.size_words[object_id] is not None:
        ladder.append(current + (SIZE,))
    return ladder


def generate_statements(graph: SceneGraph, synonyms: SynonymTable | None = None) -> list[ReferentialStatement]:
    """One unambiguous statement per (closed edge, synonym) where possible.

    Disambiguators are added color first, then size, and only until the
    target is the single match. Edges that stay ambiguous are skipped.
    """
    synonyms = synonyms or SynonymTable()
    relations = graph.closed_edges()
    m = Matcher(graph, relations)
    out = []
    for edge in sorted(relations, key=SpatialEdge.sort_key):
        if edge.relation not in synonyms:
            continue
        anchors = [m.describe_anchor(a) for a in edge.anchor_ids]
        ladder = _disambiguator_ladder(m, edge.target_id)
        for phrase in synonyms[edge.relation]:
            tokens = synonyms.tokens_for(phrase)
            for dis in ladder:
                target = m.describe_target(edge.target_id, dis)
                if m.candidates(target, tokens, anchors) == [edge.target_id]:
                    out.append(
                        ReferentialStatement(
                            text=render(target, phrase, anchors),
                            scene_id=graph.scene_id,
                            target_id=edge.target_id,
                            source_edge=edge,
                            disambiguators=dis,
                            phrase=phrase,
                        )
                    )
                    break
    return out


def sample_synonym_statements(statements: Sequence[ReferentialStatement], seed: int) -> list[ReferentialStatement]:
    """Keep one statement per source edge, picked uniformly at random."""
    groups: dict[tuple, list[ReferentialStatement]] = {}
    for st in statements:
        groups.setdefault((st.scene_id, st.source_edge), []).append(st)
    rng = random.Random(seed)
    return [rng.choice(group) for group in groups.values()]


# ---------------------------------------------------------------------------
# parsing (inverse of render)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParsedStatement:
    target: Description
    phrase: str
    anchors: tuple[Description, ...]


def _parse_description(words: str, labels: set[str], colors: set[str], allow_size: bool) -> Description:
    parts = words.split()
    options = [(None, None, parts)]
    if parts and parts[0] in colors:
        options.append((parts[0], None, parts[1:]))
    if allow_size:
        if parts and parts[0] in SIZE_WORDS:
            options.append((None, parts[0], parts[1:]))
        if len(parts) > 1 and parts[0] in colors and parts[1] in SIZE_WORDS:
            options.append((parts[0], parts[1], parts[2:]))
    for color, size, rest in options:
        label = " ".join(rest)
        if label in labels:
            return Description(label, color, size)
    raise StatementParseError(f"cannot read an object description from {words!r}")


def parse_statement(text: str, graph: SceneGraph, synonyms: SynonymTable | None = None) -> ParsedStatement:
    """Split templated text into target description, phrase and anchors,
    using the graph's labels and colors as the vocabulary."""
    synonyms = synonyms or SynonymTable()
    raw = " ".join(text.strip().rstrip(".").lower().split())
    if not raw.startswith("the ") or " that is " not in raw:
        raise StatementParseError(f"not a templated statement: {text!r}")
    head, rest = raw[4:].split(" that is ", 1)
    labels = {n.class_label for n in graph.nodes}
    colors = {n.color for n in graph.nodes if n.color}
    target = _parse_description(head, labels, colors, allow_size=True)

    for phrase in synonyms.all_phrases():
        if not rest.startswith(phrase + " the "):
            continue
        tail = rest[len(phrase) + len(" the ") :]
        tokens = synonyms.tokens_for(phrase)
        if BETWEEN in tokens:
            if " and the " not in tail:
                continue
            first, second = tail.split(" and the ", 1)
            anchors = (
                _parse_description(first, labels, colors, allow_size=False),
                _parse_description(second, labels, colors, allow_size=False),
            )
        else:
            anchors = (_parse_description(tail, labels, colors, allow_size=False),)
        return ParsedStatement(target, phrase, anchors)
    raise StatementParseError(f"no known relation phrase in {text!r}")
