"""Open-vocabulary edges from images: view selection, outlining, VLM queries,
and substitution of generated edges into a scene graph."""

from __future__ import annotations

import io
import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from PIL import Image

from . import kernels
from .grounding import ClientError, Message, MessageSequence, ModelClient, RetryPolicy, send_with_retry
from .scene import BETWEEN, Provenance, SceneGraph, SpatialEdge, Vocabulary

log = logging.getLogger(__name__)

DEFAULT_CHAR_CAP = 120

VLM_SYSTEM_PROMPT = """\
You describe the spatial relation between two objects in a photo of an indoor scene.
Each object of interest is outlined in a color named in the request.
Reply with one short phrase stating where the first object is relative to the second,
for example "on top of" or "next to the window side of".
Do not mention the outline colors. Do not repeat the object names.
Keep the phrase under {char_cap} characters and output nothing else."""


class MissingMask(KeyError):
    pass


class UnknownPair(KeyError):
    pass


# ---------------------------------------------------------------------------
# raster helpers
# ---------------------------------------------------------------------------


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB")).copy()


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def write_png(array: np.ndarray, path) -> None:
    arr = np.asarray(array)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    Image.fromarray(arr).save(path, format="PNG")


def encode_png(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def rle_encode(mask: np.ndarray) -> dict:
    """Uncompressed COCO-style RLE: column-major runs starting with zeros."""
    flat = np.asarray(mask, dtype=bool).ravel(order="F")
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": [int(c) for c in counts]}


def rle_decode(rle: Mapping) -> np.ndarray:
    h, w = (int(v) for v in rle["size"])
    counts = [int(c) for c in rle["counts"]]
    if any(c < 0 for c in counts) or sum(counts) != h * w:
        raise ValueError(f"RLE counts sum to {sum(counts)}, expected {h * w}")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape((h, w), order="F")


def _load_mask(src) -> np.ndarray:
    if isinstance(src, np.ndarray):
        return src.astype(bool)
    if isinstance(src, Mapping):
        return rle_decode(src)
    return read_mask_png(src)


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


class Observation:
    """One captured image plus per-object masks.

    ``image`` and ``masks`` accept arrays, PNG paths, or (masks only) RLE
    dicts; file contents are read on first access.
    """

    def __init__(self, image_id: str, image: Any, masks: Mapping[int, Any]):
        self.image_id = str(image_id)
        self._image_src = image
        self._mask_srcs = {int(k): v for k, v in masks.items()}

    def __repr__(self):
        return f"Observation({self.image_id!r}, masks={sorted(self._mask_srcs)})"

    @property
    def object_ids(self) -> list[int]:
        return sorted(self._mask_srcs)

    @property
    def image_source(self):
        return self._image_src

    @property
    def mask_sources(self) -> dict:
        return dict(self._mask_srcs)

    @cached_property
    def image(self) -> np.ndarray:
        src = self._image_src
        arr = np.asarray(src) if isinstance(src, np.ndarray) else read_png(src)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image {self.image_id}: expected HxWx3 RGB, got shape {arr.shape}")
        return arr

    @cached_property
    def image_shape(self) -> tuple[int, int]:
        src = self._image_src
        if isinstance(src, np.ndarray):
            return tuple(src.shape[:2])
        with Image.open(src) as im:
            return (im.height, im.width)

    @cached_property
    def masks(self) -> dict[int, np.ndarray]:
        out = {}
        for oid, src in self._mask_srcs.items():
            m = _load_mask(src)
            if m.shape != self.image_shape:
                raise ValueError(
                    f"image {self.image_id}: mask for object {oid} has shape {m.shape}, image is {self.image_shape}"
                )
            out[oid] = m
        return out

    @cached_property
    def pixel_counts(self) -> dict[int, int]:
        return {oid: int(np.count_nonzero(m)) for oid, m in self.masks.items()}

    def pixels(self, object_id: int) -> int:
        return self.pixel_counts.get(object_id, 0)


@dataclass(frozen=True)
class OutlineStyle:
    colors: tuple[tuple[str, tuple[int, int, int]], ...] = (("red", (255, 0, 0)), ("green", (0, 255, 0)))
    width: int = 3

    def __post_init__(self):
        if len(self.colors) < 2:
            raise ValueError("an outline style needs two colors")
        if self.colors[0][1] == self.colors[1][1] or self.colors[0][0] == self.colors[1][0]:
            raise ValueError("the two outline colors must differ")
        if self.width < 1:
            raise ValueError("stroke width must be >= 1")

    @property
    def color_names(self) -> tuple[str, str]:
        return self.colors[0][0], self.colors[1][0]


@dataclass(frozen=True)
class GeneratedEdge:
    target_id: int
    anchor_id: int
    text: str
    source_image_id: str
    char_limit_ok: bool = True

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("generated edge text is empty")
        if "|" in self.text or "\n" in self.text:
            raise ValueError("generated edge text may not contain '|' or newlines")

    def to_line(self) -> str:
        return f"{self.target_id}|{self.text}|{self.anchor_id}|{self.source_image_id}"

    @classmethod
    def from_line(cls, line: str, char_cap: int = DEFAULT_CHAR_CAP) -> "GeneratedEdge":
        parts = line.rstrip("\n").split("|")
        if len(parts) != 4:
            raise ValueError(f"expected target|text|anchor|image_id, got {line!r}")
        target, text, anchor, image_id = parts
        return cls(int(target), int(anchor), text, image_id, len(text) <= char_cap)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def select_image(obj1: int, obj2: int, observations: Sequence[Observation]) -> Observation | None:
    """The observation where both objects have the largest combined mask
    pixel count; ties go to the smallest image_id."""
    best = None
    best_key = None
    for obs in observations:
        p1, p2 = obs.pixels(obj1), obs.pixels(obj2)
        if p1 <= 0 or p2 <= 0:
            continue
        key = (-(p1 + p2), obs.image_id)
        if best_key is None or key < best_key:
            best, best_key = obs, key
    return best


def outline_objects(obs: Observation, ids: tuple[int, int], style: OutlineStyle | None = None) -> np.ndarray:
    style = style or OutlineStyle()
    out = obs.image.copy()
    for oid, (_, rgb) in zip(ids, style.colors):
        if obs.pixels(oid) <= 0:
            raise MissingMask(f"image {obs.image_id} has no mask pixels for object {oid}")
        stroke = kernels.outline(obs.masks[oid], style.width)
        out[stroke] = rgb
    return out


def clean_relation_text(raw: str) -> str:
    text = " ".join(raw.replace("|", "/").split())
    text = text.strip().strip("\"'`").strip()
    return text.rstrip(".").strip()


def vlm_request(
    image: np.ndarray,
    obj1: tuple[int, str],
    obj2: tuple[int, str],
    style: OutlineStyle,
    char_cap: int,
) -> MessageSequence:
    c1, c2 = style.color_names
    user = (
        f"First object: {obj1[1]} (ID {obj1[0]}), outlined in {c1}.\n"
        f"Second object: {obj2[1]} (ID {obj2[0]}), outlined in {c2}.\n"
        f"Where is the first object relative to the second?"
    )
    return MessageSequence(
        (
            Message("system", VLM_SYSTEM_PROMPT.replace("{char_cap}", str(char_cap))),
            Message("user", user, image=image),
        ),
        max_output_tokens=64,
    )


def generate_open_edge(
    obs: Observation,
    obj1: tuple[int, str],
    obj2: tuple[int, str],
    client: ModelClient,
    char_cap: int = DEFAULT_CHAR_CAP,
    style: OutlineStyle | None = None,
    retry: RetryPolicy = RetryPolicy(),
) -> GeneratedEdge:
    """Outline both objects, ask the vision model for the relation of
    ``obj1`` to ``obj2`` and cap the answer at ``char_cap`` characters."""
    style = style or OutlineStyle()
    image = outline_objects(obs, (obj1[0], obj2[0]), style)
    raw = send_with_retry(client, vlm_request(image, obj1, obj2, style, char_cap), retry)
    text = clean_relation_text(raw)
    if not text:
        raise ClientError(f"empty relation for pair {obj1[0]}->{obj2[0]}", retryable=False)
    ok = len(text) <= char_cap
    if not ok:
        text = text[:char_cap].rstrip()
    return GeneratedEdge(obj1[0], obj2[0], text, obs.image_id, ok)


def _substitutable(edge: SpatialEdge) -> bool:
    return edge.is_closed and edge.relation != BETWEEN


def substitute_edges(graph: SceneGraph, generated: Sequence[GeneratedEdge]) -> SceneGraph:
    """Replace every closed pairwise edge whose (target, anchor) pair has a
    generated edge by an open-vocabulary edge carrying the generated text.
    Other edges and all nodes are kept as they are."""
    if not generated:
        return graph
    by_pair = {}
    pairs = {e.pair for e in graph.edges if _substitutable(e)}
    for g in generated:
        pair = (g.target_id, g.anchor_id)
        if pair not in pairs:
            raise UnknownPair(f"no closed edge {g.target_id}->{g.anchor_id} to replace")
        by_pair[pair] = g
    edges = []
    for e in graph.edges:
        g = by_pair.get(e.pair) if _substitutable(e) else None
        if g is None:
            edges.append(e)
        else:
            edges.append(
                SpatialEdge(g.target_id, g.text, (g.anchor_id,), Vocabulary.OPEN, Provenance.VLM_GENERATED)
            )
    return graph.with_edges(edges)


def lint_generated_edge(edge: GeneratedEdge, style: OutlineStyle | None = None) -> list[str]:
    """Flags for human review: outline color names or camera-relative wording."""
    style = style or OutlineStyle()
    words = set(re.findall(r"[a-z]+", edge.text.lower()))
    flags = [f"outline-color:{name}" for name in style.color_names if name in words]
    if "camera" in words:
        flags.append("view-dependent:camera")
    return flags


@dataclass
class EdgeGenerationOutcome:
    graph: SceneGraph
    generated: list[GeneratedEdge] = field(default_factory=list)
    skipped_no_image: list[tuple[int, int]] = field(default_factory=list)
    failed: list[tuple[int, int, str]] = field(default_factory=list)


def generate_edges_for_graph(
    graph: SceneGraph,
    observations: Sequence[Observation],
    client: ModelClient,
    char_cap: int = DEFAULT_CHAR_CAP,
    style: OutlineStyle | None = None,
    retry: RetryPolicy = RetryPolicy(),
) -> EdgeGenerationOutcome:
    """Query one open edge per (target, anchor) pair that has a closed
    pairwise edge and a shared image; pairs without an image or whose
    request fails keep their original edges."""
    outcome = EdgeGenerationOutcome(graph)
    pairs = sorted({e.pair for e in graph.edges if _substitutable(e)})
    for target, anchor in pairs:
        obs = select_image(target, anchor, observations)
        if obs is None:
            outcome.skipped_no_image.append((target, anchor))
            continue
        t, a = graph.node(target), graph.node(anchor)
        try:
            edge = generate_open_edge(
                obs, (target, t.class_label), (anchor, a.class_label), client, char_cap, style, retry
            )
        except ClientError as exc:
            log.warning("edge %d->%d kept original: %s", target, anchor, exc)
            outcome.failed.append((target, anchor, str(exc)))
            continue
        outcome.generated.append(edge)
    outcome.graph = substitute_edges(graph, outcome.generated)
    return outcome


def load_observations(manifest: Sequence[Mapping], base: Path | None = None) -> list[Observation]:
    """Observations from manifest entries ``{"image_id", "image", "masks"}``;
    relative paths resolve against ``base``."""
    base = Path(base) if base is not None else Path(".")
    out = []
    for entry in manifest:
        masks = {}
        for k, src in entry["masks"].items():
            masks[int(k)] = src if isinstance(src, Mapping) else base / src
        out.append(Observation(entry["image_id"], base / entry["image"], masks))
    return out
