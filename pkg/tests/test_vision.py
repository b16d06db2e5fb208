import itertools

import numpy as np
import pytest

from relscene.grounding import ClientError, RetryPolicy
from relscene.relations import compute_relations
from relscene.scene import ObjectNode, Provenance, SpatialEdge, Vocabulary, build_scene_graph
from relscene.vision import (
    GeneratedEdge,
    MissingMask,
    Observation,
    OutlineStyle,
    UnknownPair,
    clean_relation_text,
    generate_edges_for_graph,
    generate_open_edge,
    lint_generated_edge,
    load_observations,
    outline_objects,
    rle_decode,
    rle_encode,
    select_image,
    substitute_edges,
    write_png,
)

FACING = "both are positioned around the same table, facing each other"
LEFT_OF_TABLE = "left side of the table, closer to the camera"


class Canned:
    name = "canned"

    def __init__(self, *answers):
        self.answers = list(answers)
        self.seen = []

    def send(self, messages):
        self.seen.append(messages)
        return self.answers.pop(0)


def square_obs(image_id="img", size=(10, 10), boxes=None):
    h, w = size
    image = np.full((h, w, 3), 100, np.uint8)
    masks = {}
    for oid, (y0, y1, x0, x1) in (boxes or {}).items():
        m = np.zeros((h, w), bool)
        m[y0:y1, x0:x1] = True
        masks[oid] = m
    return Observation(image_id, image, masks)


def count_obs(image_id, counts, shape=(8, 8)):
    masks = {}
    for oid, n in counts.items():
        m = np.zeros(shape, bool)
        m.ravel()[:n] = True
        masks[oid] = m
    return Observation(image_id, np.zeros((*shape, 3), np.uint8), masks)


# --- selection ------------------------------------------------------------


def test_select_max_combined():
    a = count_obs("A", {1: 50, 2: 30}, (20, 20))
    b = count_obs("B", {1: 40, 2: 50}, (20, 20))
    assert select_image(1, 2, [a, b]) is b


def test_select_none_without_both():
    assert select_image(1, 2, [count_obs("A", {1: 5}), count_obs("B", {2: 5, 3: 1})]) is None


def test_select_zero_pixel_mask_counts_as_absent():
    assert select_image(1, 2, [count_obs("A", {1: 5, 2: 0})]) is None


def test_select_tie_smallest_id():
    obs = [count_obs(i, {1: 3, 2: 3}) for i in ("c", "a", "b")]
    assert select_image(1, 2, obs).image_id == "a"


def test_select_permutation_invariant(rng):
    obs = [count_obs(f"i{k}", {1: int(rng.integers(0, 10)), 2: int(rng.integers(0, 10))}) for k in range(8)]
    first = select_image(1, 2, obs)
    for perm in itertools.islice(itertools.permutations(obs), 50):
        assert select_image(1, 2, list(perm)) is first


# --- masks and outlining --------------------------------------------------


def test_rle_round_trip(rng):
    for _ in range(20):
        m = rng.random((int(rng.integers(1, 12)), int(rng.integers(1, 12)))) < 0.4
        np.testing.assert_array_equal(rle_decode(rle_encode(m)), m)


def test_rle_coco_layout():
    m = np.array([[0, 1], [1, 1]], bool)
    # column-major: 0,1 then 1,1 -> one zero then three ones
    assert rle_encode(m) == {"size": [2, 2], "counts": [1, 3]}
    assert rle_encode(np.ones((1, 2), bool))["counts"] == [0, 2]
    with pytest.raises(ValueError):
        rle_decode({"size": [2, 2], "counts": [1, 1]})


def test_outline_ring_pixels():
    obs = square_obs(boxes={1: (4, 7, 3, 6), 2: (0, 2, 0, 2)})
    out = outline_objects(obs, (1, 2), OutlineStyle(width=1))
    changed = np.any(out != obs.image, axis=2)
    ring1 = np.zeros((10, 10), bool)
    ring1[4:7, 3:6] = True
    ring1[5, 4] = False
    assert (changed & ring1).sum() == 8
    assert np.all(out[ring1] == (255, 0, 0))
    assert out.shape == obs.image.shape
    # object 2 is a 2x2 block: every pixel is boundary, all green
    assert np.all(out[0:2, 0:2] == (0, 255, 0))
    assert changed.sum() == 8 + 4


def test_outline_interior_untouched():
    obs = square_obs(size=(20, 20), boxes={1: (5, 15, 5, 15), 2: (0, 3, 0, 3)})
    img = obs.image.copy()
    img[7:13, 7:13] = (1, 2, 3)
    obs = Observation("x", img, obs.masks)
    out = outline_objects(obs, (1, 2))
    np.testing.assert_array_equal(out[6:14, 6:14], img[6:14, 6:14])
    assert np.array_equal(obs.image, img) and not np.array_equal(out, img)


def test_outline_empty_mask():
    obs = square_obs(boxes={1: (4, 7, 3, 6), 2: (0, 0, 0, 0)})
    with pytest.raises(MissingMask):
        outline_objects(obs, (1, 2))
    with pytest.raises(MissingMask):
        outline_objects(obs, (1, 9))


def test_outline_style_validation():
    with pytest.raises(ValueError):
        OutlineStyle(colors=(("red", (255, 0, 0)), ("red", (255, 0, 0))))
    with pytest.raises(ValueError):
        OutlineStyle(width=0)


def test_lazy_png_loading(tmp_path):
    img = np.zeros((6, 5, 3), np.uint8)
    img[2, 2] = (9, 9, 9)
    m = np.zeros((6, 5), bool)
    m[1:3, 1:4] = True
    write_png(img, tmp_path / "im.png")
    write_png(m, tmp_path / "m1.png")
    manifest = [{"image_id": "v0", "image": "im.png", "masks": {"1": "m1.png", "2": rle_encode(m[::-1])}}]
    (obs,) = load_observations(manifest, tmp_path)
    assert "image" not in obs.__dict__
    assert obs.pixels(1) == 6 and obs.pixels(2) == 6
    assert "image" not in obs.__dict__  # counting pixels does not decode the image
    np.testing.assert_array_equal(obs.image, img)


def test_mask_shape_mismatch():
    obs = Observation("x", np.zeros((4, 4, 3), np.uint8), {1: np.ones((3, 4), bool)})
    with pytest.raises(ValueError):
        obs.pixels(1)


# --- generation -----------------------------------------------------------


def test_generate_facing_text():
    obs = square_obs(boxes={1: (1, 4, 1, 4), 2: (5, 9, 5, 9)})
    client = Canned(f'"{FACING}."')
    edge = generate_open_edge(obs, (1, "chair"), (2, "chair"), client)
    assert edge.text == FACING and edge.char_limit_ok
    assert (edge.target_id, edge.anchor_id, edge.source_image_id) == (1, 2, "img")
    msgs = client.seen[0]
    assert len(msgs) == 2 and msgs.messages[1].image is not None
    assert "outlined in red" in msgs.user_text and "outlined in green" in msgs.user_text


def test_generate_over_cap():
    obs = square_obs(boxes={1: (1, 4, 1, 4), 2: (5, 9, 5, 9)})
    edge = generate_open_edge(obs, (1, "chair"), (2, "table"), Canned(LEFT_OF_TABLE), char_cap=20)
    assert not edge.char_limit_ok and len(edge.text) <= 20
    assert LEFT_OF_TABLE.startswith(edge.text)


def test_generate_empty_answer_is_error():
    obs = square_obs(boxes={1: (1, 4, 1, 4), 2: (5, 9, 5, 9)})
    with pytest.raises(ClientError):
        generate_open_edge(obs, (1, "chair"), (2, "table"), Canned(" . "))


def test_clean_relation_text():
    assert clean_relation_text(' "on top of | the shelf." \n') == "on top of / the shelf"


def test_generated_edge_line_round_trip():
    e = GeneratedEdge(4, 6, FACING, "frame_0012")
    assert e.to_line() == f"4|{FACING}|6|frame_0012"
    assert GeneratedEdge.from_line(e.to_line()) == e
    with pytest.raises(ValueError):
        GeneratedEdge(1, 2, "a|b", "x")
    with pytest.raises(ValueError):
        GeneratedEdge.from_line("1|x|2")


def test_lint_flags():
    style = OutlineStyle()
    assert lint_generated_edge(GeneratedEdge(1, 2, LEFT_OF_TABLE, "i"), style) == ["view-dependent:camera"]
    assert lint_generated_edge(GeneratedEdge(1, 2, "next to the green chair", "i"), style) == ["outline-color:green"]
    assert lint_generated_edge(GeneratedEdge(1, 2, FACING, "i"), style) == []


# --- substitution ---------------------------------------------------------


@pytest.fixture
def four_nodes():
    nodes = [ObjectNode(i, "box") for i in range(1, 6)]
    edges = [SpatialEdge(1, "near", (2,)), SpatialEdge(3, "on", (4,)), SpatialEdge(5, "between", (1, 2))]
    return build_scene_graph("s", nodes, edges)


def test_partial_substitution(four_nodes):
    out = substitute_edges(four_nodes, [GeneratedEdge(1, 2, "left of it", "i")])
    got = {(e.target_id, e.relation, e.anchor_ids, e.vocabulary) for e in out.edges}
    assert got == {
        (1, "left of it", (2,), Vocabulary.OPEN),
        (3, "on", (4,), Vocabulary.CLOSED),
        (5, "between", (1, 2), Vocabulary.CLOSED),
    }
    new = next(e for e in out.edges if not e.is_closed)
    assert new.provenance is Provenance.VLM_GENERATED
    assert out.nodes == four_nodes.nodes


def test_empty_substitution_identity(four_nodes):
    assert substitute_edges(four_nodes, []) is four_nodes


def test_unknown_pair(four_nodes):
    with pytest.raises(UnknownPair):
        substitute_edges(four_nodes, [GeneratedEdge(2, 1, "x", "i")])
    with pytest.raises(UnknownPair):
        substitute_edges(four_nodes, [GeneratedEdge(5, 1, "x", "i")])  # between is never replaced


def test_generate_for_graph_falls_back(bedroom):
    g = bedroom.with_edges(compute_relations(bedroom))
    pair_obs = square_obs("v1", boxes={1: (1, 4, 1, 4), 4: (5, 9, 5, 9)})
    class Failing(Canned):
        def send(self, messages):
            answer = super().send(messages)
            if answer == "boom":
                raise ClientError("down", retryable=False)
            return answer

    out = generate_edges_for_graph(g, [pair_obs], Failing(LEFT_OF_TABLE, "boom"), retry=RetryPolicy(0, 0))
    assert [(e.target_id, e.anchor_id) for e in out.generated] == [(1, 4)]
    assert out.failed and out.failed[0][:2] == (4, 1)
    assert len(out.graph.edges) == len(g.edges)
    assert any(e.relation == LEFT_OF_TABLE for e in out.graph.edges)


def test_generate_for_graph_without_observations(bedroom):
    g = bedroom.with_edges(compute_relations(bedroom))
    out = generate_edges_for_graph(g, [], Canned())
    assert out.graph is g and not out.generated
    assert len(out.skipped_no_image) == len({e.pair for e in g.edges if e.relation != "between"})
