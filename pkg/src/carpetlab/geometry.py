"""Generalized Sierpinski carpet geometry and graph construction.

The carpet is parametrized by the ambient dimension ``d >= 2``, the
subdivision factor ``k`` and the width ``a`` of the removed central block
(``1 <= a < k``, ``a + k`` even).  At every refinement level each surviving
cube is split into ``k^d`` subcubes and the central ``a^d`` block is removed.
The level-``n`` graph has one vertex per surviving unit cell of the corner box
``[0, k^n)^d``; two vertices are adjacent iff their cells are at unit
Euclidean distance (differ by 1 in exactly one coordinate).

Cell membership is decided by exact integer arithmetic: a cell survives iff at
no base-``k`` digit position the digit vector lies inside the central range in
every coordinate.  This test is level-consistent, so the level-(n+1) graph
restricted to the corner box reproduces the level-n graph verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CapacityError",
    "CarpetParams",
    "validate_params",
    "CellAddress",
    "cell_survives",
    "survival_mask",
    "count_cells",
    "hausdorff_dimension",
    "VertexGraph",
    "CarpetGraph",
    "build_graph",
    "BoxPartition",
    "box_vertices",
    "write_graph",
    "read_graph",
    "DEFAULT_VERTEX_BUDGET",
]

DEFAULT_VERTEX_BUDGET = 50_000_000

# int64 coordinate keys must not overflow: side^d < 2^62.
_KEY_BITS = 62


class CapacityError(RuntimeError):
    """Raised when a requested construction exceeds the configured budget."""


@dataclass(frozen=True)
class CarpetParams:
    """Validated carpet parameters (construct via :func:`validate_params`)."""

    d: int
    k: int
    a: int

    @property
    def central_range(self) -> range:
        """Base-k digits belonging to the removed central block."""
        return range((self.k - self.a) // 2, (self.k + self.a) // 2)

    @property
    def cells_per_level(self) -> int:
        """Surviving subcells per refined cube, k^d - a^d."""
        return self.k**self.d - self.a**self.d


def validate_params(d: int, k: int, a: int) -> CarpetParams:
    """Check the carpet constraints and return a parameter object.

    Raises ValueError with a distinct message for each violated constraint:
    dimension (< 2), ordering (not 1 <= a < k) and parity (a + k odd).
    """
    if d < 2:
        raise ValueError(f"ambient dimension must be at least 2, got d={d}")
    if not (1 <= a < k):
        raise ValueError(f"block width must satisfy 1 <= a < k, got a={a}, k={k}")
    if (a + k) % 2 != 0:
        raise ValueError(f"a + k must be even so the removed block is centered, got a={a}, k={k}")
    return CarpetParams(d=d, k=k, a=a)


@dataclass(frozen=True)
class CellAddress:
    """A level-``n`` cell, identified by integer coordinates in [0, k^n)^d."""

    level: int
    coords: tuple[int, ...]

    def digits(self, k: int) -> list[tuple[int, ...]]:
        """Base-k digit vectors, most significant first; round-trips with from_digits."""
        out = []
        rem = list(self.coords)
        for _ in range(self.level):
            row = tuple(c % k for c in rem)
            rem = [c // k for c in rem]
            out.append(row)
        if any(rem):
            raise ValueError("coordinates exceed k^level")
        out.reverse()
        return out

    @classmethod
    def from_digits(cls, digits: Sequence[tuple[int, ...]], k: int) -> "CellAddress":
        if not digits:
            return cls(0, ())
        d = len(digits[0])
        coords = [0] * d
        for row in digits:
            for i in range(d):
                coords[i] = coords[i] * k + row[i]
        return cls(len(digits), tuple(coords))


def cell_survives(addr: CellAddress, params: CarpetParams) -> bool:
    """True iff the cell is never inside a removed central block.

    Works digit-by-digit: the cell dies iff at some digit position every
    coordinate's digit falls in the central range.
    """
    lo = params.central_range.start
    hi = params.central_range.stop
    k = params.k
    rem = list(addr.coords)
    for _ in range(addr.level):
        all_central = True
        for i, c in enumerate(rem):
            dig = c % k
            rem[i] = c // k
            if not (lo <= dig < hi):
                all_central = False
        if all_central:
            return False
    if any(rem):
        raise ValueError("coordinates exceed k^level")
    return True


def survival_mask(coords: np.ndarray, level: int, params: CarpetParams) -> np.ndarray:
    """Vectorized survival test for an (N, d) integer coordinate array."""
    lo = params.central_range.start
    hi = params.central_range.stop
    rem = np.asarray(coords, dtype=np.int64).copy()
    alive = np.ones(rem.shape[0], dtype=bool)
    for _ in range(level):
        digits = rem % params.k
        central = ((digits >= lo) & (digits < hi)).all(axis=1)
        alive &= ~central
        rem //= params.k
    return alive


def count_cells(n: int, params: CarpetParams) -> int:
    """Exact number of surviving level-n cells, (k^d - a^d)^n."""
    if n < 0:
        raise ValueError(f"level must be nonnegative, got {n}")
    return params.cells_per_level**n


def hausdorff_dimension(params: CarpetParams) -> float:
    """log(k^d - a^d) / log k."""
    return math.log(params.cells_per_level) / math.log(params.k)


class VertexGraph:
    """Generic immutable unit-edge graph on integer lattice points.

    Stores vertex coordinates plus a symmetric CSR adjacency structure; the
    carpet graph and the synthetic test graphs share this container so solvers
    can be exercised on both.
    """

    def __init__(self, coords: np.ndarray, indptr: np.ndarray, indices: np.ndarray):
        self.coords = np.ascontiguousarray(coords, dtype=np.int64)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        for arr in (self.coords, self.indptr, self.indices):
            arr.setflags(write=False)
        self.num_vertices = int(self.coords.shape[0])
        self.num_edges = int(len(self.indices) // 2)
        self._adj: Optional[sp.csr_matrix] = None
        self._edges: Optional[np.ndarray] = None

    @classmethod
    def from_edges(cls, coords: Iterable[Sequence[int]], edges: Iterable[tuple[int, int]]) -> "VertexGraph":
        coords = np.asarray(list(coords), dtype=np.int64)
        if coords.ndim == 1:
            coords = coords[:, None]
        n = coords.shape[0]
        pairs = sorted(set((min(i, j), max(i, j)) for i, j in edges))
        rows = np.array([p for e in pairs for p in e], dtype=np.int64)
        cols = np.array([p for e in pairs for p in reversed(e)], dtype=np.int64)
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        adj.sort_indices()
        return cls(coords, adj.indptr.astype(np.int64), adj.indices.astype(np.int64))

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def adjacency(self) -> sp.csr_matrix:
        """0/1 adjacency as scipy CSR (cached)."""
        if self._adj is None:
            n = self.num_vertices
            data = np.ones(len(self.indices), dtype=np.float64)
            self._adj = sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))
        return self._adj

    def edge_array(self) -> np.ndarray:
        """(E, 2) array of edges (i, j) with i < j, in lexicographic order."""
        if self._edges is None:
            rows = np.repeat(np.arange(self.num_vertices, dtype=np.int64), self.degrees)
            mask = rows < self.indices
            self._edges = np.column_stack([rows[mask], self.indices[mask]])
            self._edges.setflags(write=False)
        return self._edges


class CarpetGraph(VertexGraph):
    """Level-n graphical carpet; immutable after construction."""

    def __init__(self, params: CarpetParams, level: int, coords, indptr, indices):
        super().__init__(coords, indptr, indices)
        self.params = params
        self.level = int(level)
        self.side = params.k**self.level
        strides = [self.side ** (params.d - 1 - i) for i in range(params.d)]
        self._strides = np.array(strides, dtype=np.int64)
        self._keys = self.coords @ self._strides
        self._keys.setflags(write=False)

    def vertex_id(self, coords: Sequence[int]) -> Optional[int]:
        """Vertex id for a coordinate tuple, or None if absent."""
        key = int(np.dot(np.asarray(coords, dtype=np.int64), self._strides))
        pos = int(np.searchsorted(self._keys, key))
        if pos < self.num_vertices and self._keys[pos] == key:
            return pos
        return None

    def vertex_ids(self, coords: np.ndarray) -> np.ndarray:
        """Vectorized lookup; -1 marks coordinates not in the graph."""
        coords = np.asarray(coords, dtype=np.int64)
        keys = coords @ self._strides
        pos = np.searchsorted(self._keys, keys)
        pos = np.clip(pos, 0, self.num_vertices - 1)
        found = self._keys[pos] == keys
        inside = ((coords >= 0) & (coords < self.side)).all(axis=1)
        out = np.where(found & inside, pos, -1)
        return out

    def key_set(self) -> frozenset:
        return frozenset(int(x) for x in self._keys)


def _digit_block(params: CarpetParams) -> np.ndarray:
    """All non-central digit vectors, lexicographically sorted."""
    lo = params.central_range.start
    hi = params.central_range.stop
    rows = [row for row in product(range(params.k), repeat=params.d) if not all(lo <= x < hi for x in row)]
    return np.array(rows, dtype=np.int64)


def build_graph(n: int, params: CarpetParams, budget: int = DEFAULT_VERTEX_BUDGET) -> CarpetGraph:
    """Construct the level-n graphical carpet.

    Enumerates surviving cells by recursive subdivision (children of survivors
    minus the central block), which keeps construction O(|V| d) and yields the
    lexicographic vertex order directly.  Refuses to build above ``budget``
    vertices with a CapacityError naming the limit.
    """
    if n < 0:
        raise ValueError(f"level must be nonnegative, got {n}")
    expected = count_cells(n, params)
    if expected > budget:
        raise CapacityError(
            f"level-{n} carpet needs {expected} vertices, above the budget of {budget}"
        )
    side = params.k**n
    if side**params.d >= 2**_KEY_BITS:
        raise CapacityError(
            f"coordinate keys for side {side}^{params.d} exceed the 62-bit key budget"
        )

    block = _digit_block(params)
    cells = np.zeros((1, params.d), dtype=np.int64)
    for _ in range(n):
        cells = (cells[:, None, :] * params.k + block[None, :, :]).reshape(-1, params.d)
    assert cells.shape[0] == expected

    strides = np.array([side ** (params.d - 1 - i) for i in range(params.d)], dtype=np.int64)
    # The expansion is parent-major, which is not the lexicographic order of
    # the final coordinates; sort once so ids and searchsorted lookups agree.
    keys = cells @ strides
    order = np.argsort(keys)
    cells = cells[order]
    keys = keys[order]
    nv = cells.shape[0]
    ids = np.arange(nv, dtype=np.int64)

    src_list, dst_list = [], []
    for axis in range(params.d):
        movable = cells[:, axis] + 1 < side
        cand = keys[movable] + strides[axis]
        pos = np.searchsorted(keys, cand)
        pos = np.clip(pos, 0, nv - 1)
        found = keys[pos] == cand
        src_list.append(ids[movable][found])
        dst_list.append(pos[found])
    src = np.concatenate(src_list) if src_list else np.array([], dtype=np.int64)
    dst = np.concatenate(dst_list) if dst_list else np.array([], dtype=np.int64)

    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    adj = sp.coo_matrix((np.ones(len(rows), dtype=np.float64), (rows, cols)), shape=(nv, nv)).tocsr()
    adj.sort_indices()
    graph = CarpetGraph(params, n, cells, adj.indptr.astype(np.int64), adj.indices.astype(np.int64))
    assert graph.num_edges == len(src)
    return graph


@dataclass(frozen=True)
class BoxPartition:
    """Partition of the level-j corner box into inner / annulus / boundary."""

    level: int
    inner: np.ndarray
    annulus: np.ndarray
    boundary: np.ndarray
    box: np.ndarray = field(repr=False)

    @property
    def interior(self) -> np.ndarray:
        """Box minus boundary (= inner + annulus), the Dirichlet unknowns."""
        return np.setdiff1d(self.box, self.boundary, assume_unique=True)


def box_vertices(graph: CarpetGraph, j: int) -> BoxPartition:
    """Split the corner box [0, k^j)^d into inner box, annulus and boundary.

    The boundary layer is the set of box cells on the outer faces
    (some coordinate equal to k^j - 1); these are exactly the cells from which
    the walk can leave the box in one step, since the face-adjacent cell
    across each outer face always survives and the low faces border the global
    corner where the carpet ends.  The inner set is the level-(j-1) corner
    box.  The three sets are disjoint and cover the box.
    """
    if not (0 <= j <= graph.level):
        raise ValueError(f"box level must be in [0, {graph.level}], got {j}")
    k = graph.params.k
    side = k**j
    coords = graph.coords
    in_box = (coords < side).all(axis=1)
    on_face = in_box & (coords == side - 1).any(axis=1)
    inner_side = k ** (j - 1) if j >= 1 else 0
    inner = in_box & (coords < inner_side).all(axis=1) & ~on_face
    annulus = in_box & ~on_face & ~inner
    ids = np.arange(graph.num_vertices, dtype=np.int64)
    return BoxPartition(
        level=j,
        inner=ids[inner],
        annulus=ids[annulus],
        boundary=ids[on_face],
        box=ids[in_box],
    )


def write_graph(graph: CarpetGraph, path) -> None:
    """Write the text interchange format.

    Header ``carpet d k a n |V| |E|``; one ``v id c1 .. cd`` line per vertex in
    id order; one ``e id1 id2`` line per edge with id1 < id2, lexicographically
    sorted.
    """
    p = graph.params
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"carpet {p.d} {p.k} {p.a} {graph.level} {graph.num_vertices} {graph.num_edges}\n")
        for i, row in enumerate(graph.coords):
            fh.write("v %d %s\n" % (i, " ".join(str(int(c)) for c in row)))
        for i, j in graph.edge_array():
            fh.write(f"e {i} {j}\n")


def read_graph(path) -> CarpetGraph:
    """Parse the text interchange format and re-validate its invariants."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 7 or header[0] != "carpet":
            raise ValueError("malformed graph file header")
        d, k, a, n, nv, ne = (int(x) for x in header[1:])
        params = validate_params(d, k, a)
        coords = np.zeros((nv, d), dtype=np.int64)
        edges = np.zeros((ne, 2), dtype=np.int64)
        vi = ei = 0
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if int(parts[1]) != vi:
                    raise ValueError("vertex ids must be consecutive in id order")
                coords[vi] = [int(x) for x in parts[2 : 2 + d]]
                vi += 1
            elif parts[0] == "e":
                edges[ei] = (int(parts[1]), int(parts[2]))
                ei += 1
            else:
                raise ValueError(f"unexpected record {parts[0]!r}")
    if vi != nv or ei != ne:
        raise ValueError("vertex/edge counts disagree with header")
    if ne and not (edges[:, 0] < edges[:, 1]).all():
        raise ValueError("edges must be written with id1 < id2")
    diffs = np.abs(coords[edges[:, 0]] - coords[edges[:, 1]]) if ne else np.zeros((0, d))
    if ne and not (diffs.sum(axis=1) == 1).all():
        raise ValueError("edges must join cells at unit distance")
    if not survival_mask(coords, n, params).all():
        raise ValueError("file lists cells outside the carpet")
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv)).tocsr()
    adj.sort_indices()
    return CarpetGraph(params, n, coords, adj.indptr.astype(np.int64), adj.indices.astype(np.int64))
