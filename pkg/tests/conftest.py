"""Shared fixtures: carpet graphs at the levels the tests probe.

Graph construction is deterministic, so session scope is safe; the level-5
planar graph (32768 vertices) and the level-4 spatial graph (456976 vertices)
are built at most once per run, and only if a test actually asks for them.
"""

import numpy as np
import pytest

from carpetlab.geometry import CarpetParams, VertexGraph, build_graph, validate_params


@pytest.fixture(scope="session")
def params2() -> CarpetParams:
    return validate_params(2, 3, 1)


@pytest.fixture(scope="session")
def params3() -> CarpetParams:
    return validate_params(3, 3, 1)


@pytest.fixture(scope="session")
def g1(params2):
    return build_graph(1, params2)


@pytest.fixture(scope="session")
def g2(params2):
    return build_graph(2, params2)


@pytest.fixture(scope="session")
def g3(params2):
    return build_graph(3, params2)


@pytest.fixture(scope="session")
def g4(params2):
    return build_graph(4, params2)


@pytest.fixture(scope="session")
def g5(params2):
    return build_graph(5, params2)


@pytest.fixture(scope="session")
def g3d(params3):
    return build_graph(3, params3)


@pytest.fixture(scope="session")
def g3d4(params3):
    return build_graph(4, params3)


def make_path(n: int) -> VertexGraph:
    """Path on n vertices embedded along the first axis."""
    coords = [(i, 0) for i in range(n)]
    edges = [(i, i + 1) for i in range(n - 1)]
    return VertexGraph.from_edges(coords, edges)


def make_cycle(n: int) -> VertexGraph:
    coords = [(i, 0) for i in range(n)]
    edges = [(i, (i + 1) % n) for i in range(n)]
    return VertexGraph.from_edges(coords, edges)


def make_torus(side: int) -> VertexGraph:
    """side x side grid with periodic wrap; degree 4 everywhere."""
    coords = [(i, j) for i in range(side) for j in range(side)]
    idx = {c: v for v, c in enumerate(coords)}
    edges = []
    for i, j in coords:
        edges.append((idx[(i, j)], idx[((i + 1) % side, j)]))
        edges.append((idx[(i, j)], idx[(i, (j + 1) % side)]))
    return VertexGraph.from_edges(coords, edges)


def vid(graph, *coords) -> int:
    """Vertex id at integer coordinates; fails the test if absent."""
    v = graph.vertex_id(np.asarray(coords, dtype=np.int64))
    assert v is not None, f"no vertex at {coords}"
    return v
