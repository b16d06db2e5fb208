import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from relscene.cli import main
from relscene.dataio import load_generated_edges, load_report, load_scene, load_statements, save_report, save_scene
from relscene.evaluation import RunReport
from relscene.grounding import GroundingResult
from relscene.scene import ObjectNode, SpatialEdge, build_scene_graph
from relscene.serialize import GraphVariant, serialize_edge
from relscene.statements import ReferentialStatement
from relscene.vision import rle_encode, write_png

from .helpers import random_scene

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"
FACING = "both are positioned around the same table, facing each other"
LEFT_OF_TABLE = "left side of the table, closer to the camera"


@pytest.fixture
def work(tmp_path, bedroom, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    save_scene(bedroom, tmp_path / "bedroom.json")
    return tmp_path


def run(work, *argv):
    return main([argv[0], "--workdir", str(work), *argv[1:]])


def test_relate_writes_edges(work, capsys):
    assert run(work, "relate", "--scene", "bedroom.json", "--out", "rel.json") == 0
    g, _ = load_scene(work / "rel.json")
    assert int(capsys.readouterr().out) == len(g.edges) > 0
    assert not {e.relation for e in g.edges} & {"closest", "farthest"}


def test_relate_golden(work):
    assert run(work, "relate", "--scene", "bedroom.json", "--out", "rel.json") == 0
    g, _ = load_scene(work / "rel.json")
    got = "".join(serialize_edge(e) + "\n" for e in g.edges)
    assert got == (GOLDEN / "bedroom_edges.txt").read_text()


def test_relate_empty_scene(work, capsys):
    save_scene(build_scene_graph("empty", []), work / "empty.json")
    assert run(work, "relate", "--scene", "empty.json", "--out", "rel.json") == 0
    assert capsys.readouterr().out.strip() == "0"


def test_relate_config_overrides(work):
    (work / "cfg.json").write_text(json.dumps({"relations": {"excluded_relations": ["between", "near", "closest", "farthest"]}}))
    assert run(work, "relate", "--config", "cfg.json", "--scene", "bedroom.json", "--out", "rel.json") == 0
    g, _ = load_scene(work / "rel.json")
    assert {e.relation for e in g.edges} == {"above", "below", "on", "under"}


def test_statements_deterministic(work):
    run(work, "relate", "--scene", "bedroom.json", "--out", "rel.json")
    assert run(work, "statements", "--scene", "rel.json", "--out", "a.jsonl", "--seed", "4") == 0
    assert run(work, "statements", "--scene", "rel.json", "--out", "b.jsonl", "--seed", "4") == 0
    assert (work / "a.jsonl").read_bytes() == (work / "b.jsonl").read_bytes()
    sts = load_statements(work / "a.jsonl")
    assert len(sts) == len({s.source_edge for s in sts})


def test_statements_golden(work):
    run(work, "relate", "--scene", "bedroom.json", "--out", "rel.json")
    assert run(work, "statements", "--scene", "rel.json", "--out", "st.jsonl", "--seed", "0") == 0
    assert (work / "st.jsonl").read_bytes() == (GOLDEN / "bedroom_statements_seed0.jsonl").read_bytes()


def test_statements_without_edges_fails(work, capsys):
    assert run(work, "statements", "--scene", "bedroom.json", "--out", "a.jsonl") == 1
    assert "no closed edges" in capsys.readouterr().err


def test_serialize(work, capsys):
    run(work, "relate", "--scene", "bedroom.json", "--out", "rel.json")
    capsys.readouterr()
    assert run(work, "serialize", "--scene", "rel.json", "--variant", "g") == 0
    out = capsys.readouterr().out
    assert out.startswith("OBJECTS:\n1|chair\n") and "EDGES:" not in out
    assert run(work, "serialize", "--scene", "rel.json", "--statement", "the lamp that is on the nightstand") == 0
    out = capsys.readouterr().out
    assert "--- system ---" in out and "STATEMENT: the lamp that is on the nightstand" in out


def _pipeline(work):
    run(work, "relate", "--scene", "bedroom.json", "--out", "rel.json")
    run(work, "statements", "--scene", "rel.json", "--out", "st.jsonl")


def test_ground_oracle_perfect(work, capsys):
    _pipeline(work)
    capsys.readouterr()
    assert run(work, "ground", "--scene", "rel.json", "--statements", "st.jsonl", "--variant", "g_edges",
               "--client", "oracle", "--out", "rep.jsonl", "--parallel", "4") == 0
    assert "accuracy=1.0000" in capsys.readouterr().out
    rep = load_report(work / "rep.jsonl")
    assert rep.accuracy == 1.0 and rep.timestamp.startswith("2023-11-14")
    assert rep.config["client"]["name"] == "oracle"


def test_ground_random_close_to_expected(tmp_path):
    from relscene.evaluation import random_baseline
    from relscene.relations import compute_relations
    from relscene.statements import generate_statements

    g = random_scene(np.random.default_rng(3), 30, "big")
    g = g.with_edges(compute_relations(g))
    save_scene(g, tmp_path / "big.json")
    sts = generate_statements(g)
    assert len(sts) > 300
    run(tmp_path, "statements", "--scene", "big.json", "--out", "st.jsonl", "--seed", "0")
    sts = load_statements(tmp_path / "st.jsonl")
    assert run(tmp_path, "ground", "--scene", "big.json", "--statements", "st.jsonl", "--variant", "g",
               "--client", "random", "--out", "rep.jsonl") == 0
    acc = load_report(tmp_path / "rep.jsonl").accuracy
    expected = random_baseline(g, sts, "expected")
    se = np.sqrt(expected * (1 - expected) / len(sts))
    assert abs(acc - expected) < 4 * se


def test_ground_replay_byte_stable(work):
    _pipeline(work)
    sts = load_statements(work / "st.jsonl")
    (work / "replay.jsonl").write_text(
        "".join(json.dumps({"contains": f"STATEMENT: {s.text}", "response": str(s.target_id)}) + "\n"
                for s in reversed(sorted(sts, key=lambda s: len(s.text))))
    )
    for name in ("a.jsonl", "b.jsonl"):
        assert run(work, "ground", "--scene", "rel.json", "--statements", "st.jsonl",
                   "--client", "replay:replay.jsonl", "--out", name) == 0
    assert (work / "a.jsonl").read_bytes() == (work / "b.jsonl").read_bytes()
    assert load_report(work / "a.jsonl").accuracy == 1.0


def test_ground_client_failure_exit_code(work, capsys):
    _pipeline(work)
    (work / "replay.jsonl").write_text("")
    assert run(work, "ground", "--scene", "rel.json", "--statements", "st.jsonl",
               "--client", "replay:replay.jsonl", "--out", "rep.jsonl") == 2
    rep = load_report(work / "rep.jsonl")
    assert rep.accuracy == 0.0 and all(r.error for r in rep.results)


def test_invalid_scene_exit_code(work):
    (work / "bad.json").write_text('{"scene_id": "x", "nodes": [{"object_id": 1}]}')
    assert run(work, "relate", "--scene", "bad.json", "--out", "o.json") == 1


def test_unknown_client(work):
    _pipeline(work)
    assert run(work, "ground", "--scene", "rel.json", "--statements", "st.jsonl",
               "--client", "telepathy", "--out", "rep.jsonl") == 1


def _genedges_scene(work):
    nodes = [
        ObjectNode(1, "chair", ("brown",), (-0.6, 0.0, 0.45), (0.5, 0.5, 0.9)),
        ObjectNode(3, "chair", ("black",), (0.6, 0.0, 0.45), (0.5, 0.5, 0.9)),
        ObjectNode(4, "table", ("white",), (0.0, 0.0, 0.4), (1.0, 0.8, 0.8)),
        ObjectNode(8, "lamp", (), (3.0, 3.0, 0.4), (0.3, 0.3, 0.8)),
    ]
    edges = [
        SpatialEdge(1, "near", (3,)),
        SpatialEdge(1, "near", (4,)),
        SpatialEdge(4, "between", (1, 3)),
        SpatialEdge(8, "near", (4,)),
    ]
    g = build_scene_graph("diner", nodes, edges)
    masks = {}
    for oid, (y0, y1, x0, x1) in {1: (5, 15, 1, 6), 3: (5, 15, 14, 19), 4: (8, 14, 6, 14)}.items():
        m = np.zeros((20, 20), bool)
        m[y0:y1, x0:x1] = True
        masks[oid] = m
    write_png(np.full((20, 20, 3), 90, np.uint8), work / "v1.png")
    write_png(masks[1], work / "v1_m1.png")
    manifest = [{"image_id": "v1", "image": "v1.png",
                 "masks": {"1": "v1_m1.png", "3": rle_encode(masks[3]), "4": rle_encode(masks[4])}}]
    save_scene(g, work / "diner.json", manifest)
    shutil.copy(DATA / "vlm_replay.jsonl", work / "vlm.jsonl")
    return g


def test_genedges_substitutes_replayed_texts(work, capsys):
    g = _genedges_scene(work)
    assert run(work, "genedges", "--scene", "diner.json", "--client", "replay:vlm.jsonl",
               "--out-edges", "gen.txt", "--out-scene", "diner_gen.json") == 0
    assert "no_image=1" in capsys.readouterr().out
    gen = {(e.target_id, e.anchor_id): e.text for e in load_generated_edges(work / "gen.txt")}
    assert gen == {(1, 3): FACING, (1, 4): LEFT_OF_TABLE}
    out, obs = load_scene(work / "diner_gen.json")
    assert obs is not None and len(out.edges) == len(g.edges)
    rel = {(e.target_id, e.anchor_ids): e.relation for e in out.edges}
    assert rel[(1, (3,))] == FACING and rel[(1, (4,))] == LEFT_OF_TABLE
    assert rel[(8, (4,))] == "near" and rel[(4, (1, 3))] == "between"
    assert run(work, "serialize", "--scene", "diner_gen.json", "--variant", "g_genedges") == 0
    assert f"1|{LEFT_OF_TABLE}|4" in capsys.readouterr().out


def test_genedges_without_observations(work):
    g = _genedges_scene(work)
    save_scene(g, work / "bare.json")
    assert run(work, "genedges", "--scene", "bare.json", "--client", "replay:vlm.jsonl",
               "--out-edges", "gen.txt", "--out-scene", "out.json") == 0
    out, _ = load_scene(work / "out.json")
    assert out.edges == g.edges
    assert load_generated_edges(work / "gen.txt") == []


def _flip_reports(path, b, c, a=3, d=2):
    sts = [ReferentialStatement(f"s{k}", "x", 1, SpatialEdge(1, "near", (2,))) for k in range(a + b + c + d)]
    fa = [True] * a + [True] * b + [False] * c + [False] * d
    fb = [True] * a + [False] * b + [True] * c + [False] * d
    for rid, flags in (("A", fa), ("B", fb)):
        res = [GroundingResult(s, 1 if ok else 2, "1", True, ok) for s, ok in zip(sts, flags)]
        save_report(RunReport(rid, "m", GraphVariant.G_EDGES, res), path)


@pytest.mark.parametrize("b, c, stars", [(10, 2, "*"), (30, 5, "***"), (0, 0, "ns")])
def test_compare(tmp_path, capsys, b, c, stars):
    _flip_reports(tmp_path / "runs.jsonl", b, c)
    assert run(tmp_path, "compare", "runs.jsonl#A", "runs.jsonl#B", "--out", "cmp.json") == 0
    assert capsys.readouterr().out.splitlines()[1].endswith(f"  {stars}")
    doc = json.loads((tmp_path / "cmp.json").read_text())
    assert doc["significance"] == stars and doc["table"]["b"] == b


def test_compare_mismatched(tmp_path):
    _flip_reports(tmp_path / "one.jsonl", 1, 1)
    _flip_reports(tmp_path / "two.jsonl", 2, 2)
    assert run(tmp_path, "compare", "one.jsonl#A", "two.jsonl#B") == 1


def test_experiment1(work, capsys):
    g = random_scene(np.random.default_rng(8), 15, "r8")
    save_scene(g, work / "r8.json")
    run(work, "relate", "--scene", "bedroom.json", "--out", "rel.json")
    run(work, "relate", "--scene", "r8.json", "--out", "r8_rel.json")
    capsys.readouterr()
    assert run(work, "experiment1", "rel.json", "r8_rel.json", "--out-dir", "exp", "--client", "oracle") == 0
    summary = (work / "exp" / "summary.txt").read_text()
    assert summary == capsys.readouterr().out
    edges_line = next(line for line in summary.splitlines() if "G_edges" in line)
    assert edges_line.split()[-1] == "1.0000"
    for key in ("g", "g_pos", "g_edges"):
        assert load_report(work / "exp" / f"{key}.jsonl").total > 0
