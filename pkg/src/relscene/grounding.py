"""Prompt construction, model querying and answer parsing for object grounding."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .scene import SceneGraph, SpatialEdge
from .serialize import GraphVariant, serialize_graph
from .statements import Matcher, ReferentialStatement, SynonymTable, parse_statement

log = logging.getLogger(__name__)

GRAPH_MARKER = "SCENE GRAPH:"
STATEMENT_MARKER = "STATEMENT:"

EDGE_DEFINITIONS = """\
- above: the first object is higher than the second and overlaps it horizontally
- below: the first object is lower than the second and overlaps it horizontally
- on: the first object rests on top of the second
- under: the second object rests on top of the first
- near: the objects are close to each other horizontally
- in: the first object is inside the second
- between: the first object lies in the middle of the two listed objects
- any other relation text is a free-form description of the first object relative to the second"""

DEFAULT_SYSTEM_TEMPLATE = """\
You locate objects in a 3D scene graph.
Input: a serialized scene graph and a statement that refers to exactly one object.
The OBJECTS section lists one object per line as id|name, optionally followed by
colors, the bounding-box center (x,y,z) and size (dx,dy,dz) in meters; z points up.
The EDGES section, when present, lists spatial relations as target_id|relation|anchor_id,
or target_id|between|anchor1_id and anchor2_id.
Relations:
{edge_definitions}
Output: only the integer ID of the referenced object, nothing else.
Example:
OBJECTS:
1|table
2|cup
3|cup
EDGES:
2|on|1
3|near|1
Statement: the cup that is on the table
Answer: 2"""


class ClientError(RuntimeError):
    """A request did not produce a model answer."""

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class Unresolvable(ValueError):
    pass


class Ambiguous(ValueError):
    pass


@dataclass(frozen=True)
class PromptConfig:
    system_template: str = DEFAULT_SYSTEM_TEMPLATE
    merge_system_into_user: bool = False
    max_output_tokens: int = 16

    def __post_init__(self):
        if not self.system_template.strip():
            raise ValueError("system_template is empty")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def system_text(self) -> str:
        return self.system_template.replace("{edge_definitions}", EDGE_DEFINITIONS)

    def to_dict(self) -> dict:
        return {
            "system_template_sha256": hashlib.sha256(self.system_template.encode()).hexdigest(),
            "merge_system_into_user": self.merge_system_into_user,
            "max_output_tokens": self.max_output_tokens,
        }


@dataclass(frozen=True)
class Message:
    role: str
    content: str
    image: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.role not in ("system", "user"):
            raise ValueError(f"unsupported role {self.role!r}")


@dataclass(frozen=True)
class MessageSequence:
    messages: tuple[Message, ...]
    max_output_tokens: int = 16

    def __post_init__(self):
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("a message sequence needs at least one user message")

    def __iter__(self):
        return iter(self.messages)

    def __len__(self):
        return len(self.messages)

    @property
    def user_text(self) -> str:
        return [m for m in self.messages if m.role == "user"][-1].content

    def digest(self) -> str:
        """Stable hash of roles, texts and image pixels."""
        h = hashlib.sha256()
        for m in self.messages:
            h.update(json.dumps([m.role, m.content]).encode())
            if m.image is not None:
                img = np.ascontiguousarray(m.image)
                h.update(repr(img.shape).encode())
                h.update(img.tobytes())
        return h.hexdigest()


class ModelClient(Protocol):
    name: str

    def send(self, messages: MessageSequence) -> str: ...


@dataclass(frozen=True)
class RetryPolicy:
    retries: int = 2
    backoff: float = 0.5


def send_with_retry(client: ModelClient, messages: MessageSequence, policy: RetryPolicy = RetryPolicy()) -> str:
    """Send, retrying retryable :class:`ClientError` with exponential backoff."""
    attempt = 0
    while True:
        try:
            return client.send(messages)
        except ClientError as exc:
            if not exc.retryable or attempt >= policy.retries:
                raise
            delay = policy.backoff * (2**attempt)
            log.warning("client %s failed (%s); retry %d in %.2fs", client.name, exc, attempt + 1, delay)
            time.sleep(delay)
            attempt += 1


@dataclass(frozen=True)
class GroundingResult:
    statement: ReferentialStatement
    predicted_id: Optional[int]
    raw_output: str
    valid_format: bool
    correct: bool
    parse_mode: str = "strict"
    error: Optional[str] = None

    def __post_init__(self):
        if not self.valid_format and (self.predicted_id is not None or self.correct):
            raise ValueError("an invalid-format result has no prediction and is never correct")


# ---------------------------------------------------------------------------


def build_prompt(serialized_graph: str, statement_text: str, cfg: PromptConfig | None = None) -> MessageSequence:
    cfg = cfg or PromptConfig()
    if not serialized_graph.strip() or not statement_text.strip():
        raise ValueError("serialized graph and statement must be non-empty")
    system = cfg.system_text()
    user = f"{GRAPH_MARKER}\n{serialized_graph.rstrip(chr(10))}\n{STATEMENT_MARKER} {statement_text.strip()}"
    if cfg.merge_system_into_user:
        msgs = (Message("user", f"{system}\n\n{user}"),)
    else:
        msgs = (Message("system", system), Message("user", user))
    return MessageSequence(msgs, cfg.max_output_tokens)


def split_user_message(content: str) -> tuple[str, str]:
    """Recover ``(serialized_graph, statement_text)`` from a grounding prompt."""
    g = content.rfind(GRAPH_MARKER + "\n")
    s = content.rfind("\n" + STATEMENT_MARKER)
    if g < 0 or s < g:
        raise ValueError("not a grounding prompt")
    graph_text = content[g + len(GRAPH_MARKER) + 1 : s] + "\n"
    statement = content[s + len(STATEMENT_MARKER) + 1 :].strip()
    return graph_text, statement


_NUMBER = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?(?!\w)")


def parse_model_output(raw: str, graph: SceneGraph) -> tuple[Optional[int], bool]:
    """``(predicted_id, valid_format)`` for a raw model answer."""
    pred, valid, _ = classify_output(raw, graph)
    return pred, valid


def classify_output(raw: str, graph: SceneGraph) -> tuple[Optional[int], bool, str]:
    """Like :func:`parse_model_output` plus the mode: strict, lenient or invalid.

    Strict: the trimmed output is one integer. Lenient: the output holds exactly
    one numeric token and it is an integer. The id must exist in ``graph``.
    """
    text = raw.strip()
    if re.fullmatch(r"\d+", text):
        oid, mode = int(text), "strict"
    else:
        tokens = _NUMBER.findall(text)
        if len(tokens) != 1 or not tokens[0].isdigit():
            return None, False, "invalid"
        oid, mode = int(tokens[0]), "lenient"
    if oid not in graph:
        return None, False, "invalid"
    return oid, True, mode


def ground(
    statement: ReferentialStatement,
    graph: SceneGraph,
    variant: GraphVariant,
    client: ModelClient,
    cfg: PromptConfig | None = None,
    retry: RetryPolicy = RetryPolicy(),
) -> GroundingResult:
    return _ground_serialized(statement, graph, serialize_graph(graph, variant), client, cfg, retry)


def _ground_serialized(
    statement: ReferentialStatement,
    graph: SceneGraph,
    graph_text: str,
    client: ModelClient,
    cfg: PromptConfig | None,
    retry: RetryPolicy,
) -> GroundingResult:
    if statement.scene_id != graph.scene_id:
        raise ValueError(f"statement scene {statement.scene_id!r} does not match graph {graph.scene_id!r}")
    prompt = build_prompt(graph_text, statement.text, cfg)
    try:
        raw = send_with_retry(client, prompt, retry)
    except ClientError as exc:
        return GroundingResult(statement, None, "", False, False, "invalid", error=str(exc))
    pred, valid, mode = classify_output(raw, graph)
    return GroundingResult(statement, pred, raw, valid, valid and pred == statement.target_id, mode)


def ground_many(
    statements: Sequence[ReferentialStatement],
    graph: SceneGraph,
    variant: GraphVariant,
    client: ModelClient,
    cfg: PromptConfig | None = None,
    parallel: int = 1,
    retry: RetryPolicy = RetryPolicy(),
) -> list[GroundingResult]:
    """Ground each statement independently; results keep input order."""

    graph_text = serialize_graph(graph, variant)

    def one(st):
        return _ground_serialized(st, graph, graph_text, client, cfg, retry)

    if parallel <= 1:
        return [one(st) for st in statements]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(one, statements))


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def resolve_text(
    text: str,
    graph: SceneGraph,
    relations: Sequence[SpatialEdge],
    synonyms: SynonymTable | None = None,
    matcher: Matcher | None = None,
) -> int:
    """Id of the single object satisfying a templated statement.

    Pass a prebuilt ``matcher`` (over the same graph and relations) when
    resolving many statements against one scene.
    """
    synonyms = synonyms or SynonymTable()
    try:
        parsed = parse_statement(text, graph, synonyms)
    except ValueError as exc:
        raise Unresolvable(str(exc)) from exc
    tokens = synonyms.tokens_for(parsed.phrase)
    matcher = matcher or Matcher(graph, relations)
    found = matcher.candidates(parsed.target, tokens, parsed.anchors)
    if not found:
        raise Unresolvable(f"no object satisfies {text!r}")
    if len(found) > 1:
        raise Ambiguous(f"{text!r} matches objects {found}")
    return found[0]


def oracle_ground(
    statement: ReferentialStatement,
    graph: SceneGraph,
    relations: Sequence[SpatialEdge] | None = None,
    synonyms: SynonymTable | None = None,
) -> int:
    """Invert the statement template against the graph; see :func:`resolve_text`."""
    rel = graph.closed_edges() if relations is None else relations
    return resolve_text(statement.text, graph, rel, synonyms)

