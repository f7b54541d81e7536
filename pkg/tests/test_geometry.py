import math

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from carpetlab.geometry import (
    CapacityError,
    CellAddress,
    box_vertices,
    build_graph,
    cell_survives,
    count_cells,
    hausdorff_dimension,
    read_graph,
    survival_mask,
    validate_params,
    write_graph,
)

from conftest import vid


# ---------------------------------------------------------------- parameters


def test_validate_params_accepts_known_families():
    p = validate_params(2, 3, 1)
    assert (p.d, p.k, p.a) == (2, 3, 1)
    assert list(p.central_range) == [1]
    assert validate_params(3, 3, 1).d == 3
    assert validate_params(2, 4, 2).central_range == range(1, 3)
    assert validate_params(2, 5, 3).central_range == range(1, 4)


@pytest.mark.parametrize(
    "d,k,a",
    [
        (1, 3, 1),  # need at least two dimensions
        (2, 3, 3),  # a must be smaller than k
        (2, 3, 0),  # a must be positive
        (2, 3, 2),  # a + k must be even
        (2, 4, 1),
        (2, 2, 1),
        (0, 3, 1),
    ],
)
def test_validate_params_rejects(d, k, a):
    with pytest.raises(ValueError):
        validate_params(d, k, a)


def test_cells_per_level(params2, params3):
    assert params2.cells_per_level == 8
    assert params3.cells_per_level == 26


# ------------------------------------------------------------------ survival


def test_center_cell_is_removed(params2):
    assert not cell_survives(CellAddress.from_digits([(1, 1)], 3), params2)
    for x in range(3):
        for y in range(3):
            if (x, y) != (1, 1):
                assert cell_survives(CellAddress.from_digits([(x, y)], 3), params2)


def test_survival_is_checked_at_every_level(params2):
    # A dead digit anywhere along the address kills the cell.
    assert not cell_survives(CellAddress.from_digits([(1, 1), (0, 0)], 3), params2)
    assert not cell_survives(CellAddress.from_digits([(0, 0), (1, 1)], 3), params2)
    assert cell_survives(CellAddress.from_digits([(0, 2), (2, 0)], 3), params2)


def test_address_digit_round_trip(params2):
    digits = [(0, 2), (1, 0), (2, 2), (0, 1)]
    addr = CellAddress.from_digits(digits, 3)
    assert addr.digits(3) == digits


def test_survival_mask_matches_pointwise(params2):
    side = 9
    xs, ys = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    coords = np.stack([xs.ravel(), ys.ravel()], axis=1)
    mask = survival_mask(coords, 2, params2)
    for row, ok in zip(coords, mask):
        addr = CellAddress(2, tuple(int(c) for c in row))
        assert cell_survives(addr, params2) == ok
    assert int(mask.sum()) == 64


def test_count_cells(params2, params3):
    assert [count_cells(n, params2) for n in range(6)] == [1, 8, 64, 512, 4096, 32768]
    assert count_cells(1, params3) == 26
    assert count_cells(3, params3) == 17576
    # Plain integer power: no silent wraparound at large levels.
    assert count_cells(30, params2) == 8**30


def test_hausdorff_dimension(params2, params3):
    assert hausdorff_dimension(params2) == pytest.approx(1.892789260714372, abs=1e-15)
    assert hausdorff_dimension(params3) == pytest.approx(math.log(26) / math.log(3), abs=1e-15)
    assert hausdorff_dimension(validate_params(2, 4, 2)) == pytest.approx(
        math.log(12) / math.log(4), abs=1e-15
    )


# -------------------------------------------------------------- construction


def test_level_counts_2d(g1, g2, g3, g4, g5):
    assert (g1.num_vertices, g1.num_edges) == (8, 8)
    assert (g2.num_vertices, g2.num_edges) == (64, 88)
    assert (g3.num_vertices, g3.num_edges) == (512, 776)
    assert (g4.num_vertices, g4.num_edges) == (4096, 6424)
    assert (g5.num_vertices, g5.num_edges) == (32768, 52040)


def test_level_counts_3d(params3, g3d):
    g1 = build_graph(1, params3)
    assert (g1.num_vertices, g1.num_edges) == (26, 48)
    assert (g3d.num_vertices, g3d.num_edges) == (17576, 47568)


def test_level_one_is_a_cycle(g1):
    assert (g1.degrees == 2).all()
    ncomp, _ = connected_components(g1.adjacency(), directed=False)
    assert ncomp == 1


def test_connected(g3, g3d):
    for g in (g3, g3d):
        ncomp, _ = connected_components(g.adjacency(), directed=False)
        assert ncomp == 1


def test_coords_are_lex_sorted_and_unique(g3):
    keys = g3.coords[:, 0] * g3.side + g3.coords[:, 1]
    assert (np.diff(keys) > 0).all()


def test_edges_join_unit_distance_cells(g2, g3d):
    for g in (g2, g3d):
        e = g.edge_array()
        diffs = np.abs(g.coords[e[:, 0]] - g.coords[e[:, 1]])
        assert (diffs.sum(axis=1) == 1).all()
        assert (e[:, 0] < e[:, 1]).all()


def test_degrees_bounded_by_2d(g4, g3d):
    assert g4.degrees.max() <= 4
    assert g3d.degrees.max() <= 6
    assert g4.degrees.min() >= 1


def test_vertex_id_round_trip(g2):
    for i in range(g2.num_vertices):
        assert vid(g2, *g2.coords[i]) == i
    assert g2.vertex_id(np.array([1, 1])) is None  # removed cell
    assert g2.vertex_id(np.array([9, 0])) is None  # outside the window


def test_vertex_ids_vectorized(g2):
    queries = np.array([[0, 0], [1, 1], [8, 8], [99, 0]])
    got = g2.vertex_ids(queries)
    assert got[0] == 0
    assert got[1] == -1
    assert got[2] == g2.num_vertices - 1
    assert got[3] == -1


def test_nesting(g2, g3):
    # The level-2 corner box of the level-3 graph is the level-2 graph.
    inside = (g3.coords < 9).all(axis=1)
    np.testing.assert_array_equal(g3.coords[inside], g2.coords)
    e3 = g3.edge_array()
    keep = inside[e3[:, 0]] & inside[e3[:, 1]]
    # Vertex ids agree because both orders are lexicographic.
    relabel = np.cumsum(inside) - 1
    inner_edges = {(int(relabel[i]), int(relabel[j])) for i, j in e3[keep]}
    assert inner_edges == {(int(i), int(j)) for i, j in g2.edge_array()}


def test_reflection_symmetry(g3):
    # The cell set is invariant under axis swap and under reflection of any
    # single axis through the window midplane.
    keys = {tuple(map(int, row)) for row in g3.coords}
    assert {(y, x) for x, y in keys} == keys
    assert {(g3.side - 1 - x, y) for x, y in keys} == keys


def test_box_partition(g3):
    sizes = {}
    for j in (1, 2, 3):
        bp = box_vertices(g3, j)
        sizes[j] = (len(bp.inner), len(bp.annulus), len(bp.boundary))
        combined = np.concatenate([bp.inner, bp.annulus, bp.boundary])
        assert len(np.unique(combined)) == len(combined) == len(bp.box)
        assert set(combined.tolist()) == set(bp.box.tolist())
        # Boundary layer = box cells on the high faces.
        on_face = (g3.coords[bp.box] == 3**j - 1).any(axis=1)
        np.testing.assert_array_equal(np.sort(bp.box[on_face]), np.sort(bp.boundary))
        assert set(bp.interior.tolist()) == set(bp.box.tolist()) - set(bp.boundary.tolist())
    assert sizes == {1: (1, 2, 5), 2: (8, 39, 17), 3: (64, 395, 53)}
    with pytest.raises(ValueError):
        box_vertices(g3, 4)


def test_boundary_is_one_step_exit_layer(g4):
    # From a boundary cell of the level-2 box the walk can leave the box in
    # one step; from interior cells it cannot.
    bp = box_vertices(g4, 2)
    in_box = np.zeros(g4.num_vertices, dtype=bool)
    in_box[bp.box] = True
    for v in bp.boundary:
        assert any(not in_box[w] for w in g4.neighbors(int(v)))
    for v in bp.interior:
        assert all(in_box[w] for w in g4.neighbors(int(v)))


# ------------------------------------------------------------------ capacity


def test_budget_guard(params2):
    with pytest.raises(CapacityError, match="budget"):
        build_graph(5, params2, budget=10_000)


def test_key_width_guard(params3):
    with pytest.raises(CapacityError, match="key"):
        build_graph(14, params3, budget=10**30)


def test_negative_level_rejected(params2):
    with pytest.raises(ValueError):
        build_graph(-1, params2)


# ------------------------------------------------------------------- file io


def test_graph_file_round_trip(tmp_path, g2):
    path = tmp_path / "g2.txt"
    write_graph(g2, path)
    back = read_graph(path)
    assert back.level == 2
    assert (back.params.d, back.params.k, back.params.a) == (2, 3, 1)
    np.testing.assert_array_equal(back.coords, g2.coords)
    np.testing.assert_array_equal(back.edge_array(), g2.edge_array())


def test_graph_file_header_text(tmp_path, g1):
    path = tmp_path / "g1.txt"
    write_graph(g1, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "carpet 2 3 1 1 8 8"
    assert lines[1] == "v 0 0 0"
    assert sum(1 for l in lines if l.startswith("e ")) == 8


@pytest.mark.parametrize(
    "mutate,message",
    [
        (lambda t: t.replace("carpet", "zebra", 1), "header"),
        (lambda t: t.replace("v 0 0 0", "v 5 0 0", 1), "consecutive"),
        (lambda t: t.replace("e 0 1", "e 1 0", 1), "id1 < id2"),
        (lambda t: t + "q 1 2\n", "unexpected record"),
    ],
)
def test_graph_file_rejects_corruption(tmp_path, g2, mutate, message):
    path = tmp_path / "bad.txt"
    write_graph(g2, path)
    path.write_text(mutate(path.read_text()))
    with pytest.raises(ValueError, match=message):
        read_graph(path)


def test_graph_file_rejects_dead_cells(tmp_path):
    # Unit-distance edges, consecutive ids, but (1, 1) is a removed cell.
    path = tmp_path / "dead.txt"
    path.write_text("carpet 2 3 1 1 3 2\nv 0 0 0\nv 1 1 0\nv 2 1 1\ne 0 1\ne 1 2\n")
    with pytest.raises(ValueError, match="outside the carpet"):
        read_graph(path)
