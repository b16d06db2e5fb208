import numpy as np
import pytest

from relscene._accel import ENV_FLAG, HAVE_NUMBA
from relscene.scene import ObjectNode, SpatialEdge, build_scene_graph

BACKENDS = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per kernel backend."""
    monkeypatch.setenv(ENV_FLAG, "0" if request.param == "numba" else "1")
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bedroom():
    """Cabinet above a nightstand, a lamp on it, two chairs at a table."""
    nodes = [
        ObjectNode(2, "nightstand", ("white",), (0.0, 0.0, 0.3), (0.5, 0.5, 0.6)),
        ObjectNode(5, "cabinet", ("brown",), (0.0, 0.0, 1.6), (0.6, 0.4, 0.5)),
        ObjectNode(7, "lamp", ("white",), (0.1, 0.05, 0.75), (0.2, 0.2, 0.3)),
        ObjectNode(1, "chair", ("brown",), (3.0, 0.0, 0.45), (0.5, 0.5, 0.9)),
        ObjectNode(3, "chair", ("black",), (4.6, 0.0, 0.45), (0.5, 0.5, 0.9)),
        ObjectNode(4, "table", ("white",), (3.8, 0.0, 0.4), (1.0, 0.8, 0.8)),
    ]
    return build_scene_graph("bedroom", nodes)


@pytest.fixture
def lamp_bed():
    return build_scene_graph(
        "lamp-bed",
        [
            ObjectNode(0, "lamp", ("white",), (0.0, 0.0, 1.5), (0.4, 0.4, 0.2)),
            ObjectNode(1, "bed", ("blue",), (0.0, 0.0, 0.5), (1.0, 1.0, 1.0)),
        ],
    )


@pytest.fixture
def tiny_graph():
    nodes = [
        ObjectNode(12, "chair", ("brown",), (1.2, 0.5, 0.45), (0.5, 0.5, 0.9)),
        ObjectNode(7, "table", (), (1.25, 0.5, 0.2), (1.0, 1.0, 0.4)),
    ]
    return build_scene_graph("tiny", nodes, [SpatialEdge(12, "on", (7,))])
