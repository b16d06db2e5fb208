"""Model clients: HTTP chat-completions, oracle, replay/record and offline mocks.

All clients are stateless: the reply depends only on the request.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import threading
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .grounding import ClientError, MessageSequence, Unresolvable, Ambiguous, resolve_text, split_user_message
from .scene import SceneGraph, SpatialEdge
from .serialize import parse_serialized_graph, serialize_edge
from .statements import Matcher, ReferentialStatement, SynonymTable
from .vision import encode_png


def _prompt_rng(seed: int, messages: MessageSequence) -> random.Random:
    return random.Random(f"{seed}:{messages.digest()}")


def _statement_label(statement: str, labels: Sequence[str]) -> str | None:
    head = statement.strip().lower().split(" that is ", 1)[0]
    for label in sorted(labels, key=len, reverse=True):
        if head == f"the {label}" or head.endswith(" " + label):
            return label
    return None


class OracleClient:
    """Answers with the object that the templated statement resolves to in
    the wrapped graph, or ``unresolvable``."""

    name = "oracle"

    def __init__(self, graph: SceneGraph, relations: Sequence[SpatialEdge] | None = None,
                 synonyms: SynonymTable | None = None):
        self.graph = graph
        self.relations = list(graph.closed_edges() if relations is None else relations)
        self.synonyms = synonyms or SynonymTable()
        self._matcher = Matcher(graph, self.relations)

    def send(self, messages: MessageSequence) -> str:
        _, statement = split_user_message(messages.user_text)
        try:
            return str(resolve_text(statement, self.graph, self.relations, self.synonyms, self._matcher))
        except (Unresolvable, Ambiguous):
            return "unresolvable"


class RandomClassClient:
    """Guesses uniformly among the listed objects whose name matches the
    statement's target class; the name-only baseline as a client."""

    name = "random-class"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def send(self, messages: MessageSequence) -> str:
        graph_text, statement = split_user_message(messages.user_text)
        nodes, _ = parse_serialized_graph(graph_text)
        label = _statement_label(statement, {n.class_label for n in nodes})
        pool = sorted(n.object_id for n in nodes if n.class_label == label)
        if not pool:
            return "unknown"
        return str(_prompt_rng(self.seed, messages).choice(pool))


class EdgeLookupClient:
    """Degraded mock: correct exactly when the statement's source edge is
    listed in the prompt, otherwise a random same-class guess."""

    name = "edge-lookup"

    def __init__(self, statements: Sequence[ReferentialStatement], seed: int = 0):
        self.by_text = {st.text: st for st in statements}
        self.seed = seed
        self._lock = threading.Lock()
        self._parsed: dict[str, tuple[set[str], dict[int, str]]] = {}

    def _graph_view(self, graph_text: str) -> tuple[set[str], dict[int, str]]:
        with self._lock:
            view = self._parsed.get(graph_text)
        if view is None:
            edge_lines = set(graph_text.split("EDGES:\n", 1)[1].splitlines()) if "EDGES:\n" in graph_text else set()
            nodes, _ = parse_serialized_graph(graph_text)
            view = (edge_lines, {n.object_id: n.class_label for n in nodes})
            with self._lock:
                self._parsed = {graph_text: view}  # one scene at a time is the common case
        return view

    def send(self, messages: MessageSequence) -> str:
        graph_text, text = split_user_message(messages.user_text)
        st = self.by_text.get(text)
        if st is None:
            return "unknown"
        edge_lines, labels = self._graph_view(graph_text)
        if serialize_edge(st.source_edge) in edge_lines:
            return str(st.target_id)
        label = labels.get(st.target_id)
        pool = sorted(oid for oid, lab in labels.items() if lab == label)
        return str(_prompt_rng(self.seed, messages).choice(pool)) if pool else "unknown"


class ReplayClient:
    """Canned answers from a JSON-lines record file.

    Each record has ``response`` plus either ``prompt_sha256`` (exact
    :meth:`MessageSequence.digest`) or ``contains`` (substring of the last
    user message). Exact digests win; substring records are tried in file
    order.
    """

    name = "replay"

    def __init__(self, path):
        self.path = Path(path)
        self.exact: dict[str, str] = {}
        self.fuzzy: list[tuple[str, str]] = []
        with open(self.path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "prompt_sha256" in rec:
                    self.exact[rec["prompt_sha256"]] = rec["response"]
                elif "contains" in rec:
                    self.fuzzy.append((rec["contains"], rec["response"]))
                else:
                    raise ValueError(f"{self.path}:{n}: record needs prompt_sha256 or contains")

    def send(self, messages: MessageSequence) -> str:
        digest = messages.digest()
        if digest in self.exact:
            return self.exact[digest]
        text = messages.user_text
        for needle, response in self.fuzzy:
            if needle in text:
                return response
        raise ClientError(f"no recorded response for prompt {digest[:12]}", retryable=False)


class RecordingClient:
    """Forwards to ``inner`` and appends each exchange as a replay record."""

    def __init__(self, inner, path):
        self.inner = inner
        self.path = Path(path)
        self.name = f"record:{inner.name}"
        self._lock = threading.Lock()

    def send(self, messages: MessageSequence) -> str:
        response = self.inner.send(messages)
        rec = json.dumps({"prompt_sha256": messages.digest(), "response": response})
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(rec + "\n")
        return response


class HttpChatClient:
    """OpenAI-style ``/chat/completions`` client.

    The API key is read from the environment variable ``api_key_env`` at
    request time. Images go out as base64 PNG data URLs.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str = "OPENAI_API_KEY",
                 timeout: float = 60.0, temperature: float | None = None,
                 extra: Mapping | None = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.temperature = temperature
        self.extra = dict(extra or {})
        self.name = f"http:{model}"

    def payload(self, messages: MessageSequence) -> dict:
        out = []
        for m in messages:
            if m.image is None:
                out.append({"role": m.role, "content": m.content})
                continue
            url = "data:image/png;base64," + base64.b64encode(encode_png(m.image)).decode("ascii")
            out.append({
                "role": m.role,
                "content": [
                    {"type": "text", "text": m.content},
                    {"type": "image_url", "image_url": {"url": url}},
                ],
            })
        body = {"model": self.model, "messages": out, "max_completion_tokens": messages.max_output_tokens}
        if self.temperature is not None:
            body["temperature"] = self.temperature
        body.update(self.extra)
        return body

    def send(self, messages: MessageSequence) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(self.endpoint, json=self.payload(messages), headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ClientError(f"transport error: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ClientError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ClientError(f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=False)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ClientError(f"malformed response body: {exc}", retryable=False) from exc
        return content if isinstance(content, str) else json.dumps(content)


def describe_client(client) -> dict:
    """Provenance record for run reports."""
    info = {"name": getattr(client, "name", type(client).__name__)}
    for attr in ("endpoint", "model", "temperature", "seed", "timeout"):
        if hasattr(client, attr):
            info[attr] = getattr(client, attr)
    if isinstance(client, ReplayClient):
        info["record_sha256"] = hashlib.sha256(client.path.read_bytes()).hexdigest()
    return info
