"""Dirichlet problems on carpet boxes: harmonic measure, Harnack ratios,
hitting probabilities, and expected exit times.

A function on graph vertices is harmonic at ``v`` when it equals the mean of
its neighbor values; the mean uses the true vertex degree, so the walk
reflects at the carpet boundary without ghost cells.  Everything here is a
linear solve against the graph Laplacian restricted to an interior set, via
:class:`carpetlab.linalg.DirichletSystem`.

Ball-based quantities (hitting probability, exit time) are computed for the
random walk on the *built* graph.  When every non-fixed vertex of the problem
stays clear of the window's high faces this coincides with the walk on the
unbounded carpet; the standard experiment catalogs enforce that margin when
sampling centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .geometry import CarpetGraph, box_vertices
from .linalg import DEFAULT_TOL, DirichletSystem
from .seeding import derive_rng

__all__ = [
    "BoxDomain",
    "HarmonicField",
    "HarnackReport",
    "HittingSpec",
    "box_domain",
    "solve_dirichlet",
    "harmonic_measure",
    "harnack_constant",
    "oscillation_rho",
    "hitting_probability",
    "expected_exit_time",
    "hitting_pair_catalog",
]

DEGENERATE_FLOOR = 1e-300


@dataclass(frozen=True)
class BoxDomain:
    """A solvable region: disjoint interior and boundary vertex sets.

    Every interior vertex's neighbors must lie inside the domain, so the
    Dirichlet problem is self-contained.
    """

    graph: object
    interior: np.ndarray
    boundary: np.ndarray
    level: Optional[int] = None

    def __post_init__(self):
        interior = np.asarray(self.interior, dtype=np.int64)
        boundary = np.asarray(self.boundary, dtype=np.int64)
        object.__setattr__(self, "interior", interior)
        object.__setattr__(self, "boundary", boundary)
        if boundary.size == 0:
            raise ValueError("domain needs at least one boundary vertex")
        if np.intersect1d(interior, boundary).size:
            raise ValueError("interior and boundary vertex sets overlap")
        mask = np.zeros(self.graph.num_vertices, dtype=bool)
        mask[interior] = True
        mask[boundary] = True
        rows = self.graph.adjacency()[interior]
        if rows.nnz and not mask[rows.indices].all():
            raise ValueError("an interior vertex has a neighbor outside the domain")


def box_domain(graph: CarpetGraph, j: int) -> BoxDomain:
    """Domain for the level-``j`` corner box: interior vs. face cells."""
    part = box_vertices(graph, j)
    return BoxDomain(graph=graph, interior=part.interior, boundary=part.boundary, level=j)


def domain_from_fixed(graph, fixed_ids) -> BoxDomain:
    """Ad-hoc domain: the given vertices are boundary, the rest interior."""
    fixed = np.asarray(fixed_ids, dtype=np.int64)
    mask = np.ones(graph.num_vertices, dtype=bool)
    mask[fixed] = False
    return BoxDomain(graph=graph, interior=np.nonzero(mask)[0], boundary=np.sort(fixed))


@dataclass
class HarmonicField:
    """Solution of one Dirichlet problem; ``values`` is NaN off-domain."""

    domain: BoxDomain
    values: np.ndarray
    residual: float
    iterations: int = 0


@dataclass
class HarnackReport:
    level: int
    constant: float
    rho: float
    witness: tuple[int, int, int]  # (argmax x, argmin y, boundary vertex b)
    rho_witness: tuple[int, int, int]
    max_residual: float
    degenerate: list

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "constant": self.constant,
            "rho": self.rho,
            "witness": list(self.witness),
            "rho_witness": list(self.rho_witness),
            "max_residual": self.max_residual,
            "degenerate": [list(p) for p in self.degenerate],
        }


@dataclass(frozen=True)
class HittingSpec:
    """Inner ball of radius ``r`` around ``x``, absorbing shell at ``c2 * r``.

    Starting points are admitted within ``c1 * r``; the defaults leave an
    annulus of width ``2 r`` between the inner ball and the absorbing shell.
    """

    x: int
    r: float
    c1: float = 2.0
    c2: float = 4.0

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("inner radius must be positive")
        if not (self.c2 > self.c1 > 1.0):
            raise ValueError("radius factors must satisfy c2 > c1 > 1")


def _max_principle_check(values, interior, lo, hi, tolerance):
    if interior.size == 0:
        return
    inner_vals = values[interior]
    slack = max(1e-12, 1e3 * tolerance) * max(1.0, hi - lo, abs(hi), abs(lo))
    if inner_vals.min() < lo - slack or inner_vals.max() > hi + slack:
        raise RuntimeError(
            f"maximum principle violated: interior range "
            f"[{inner_vals.min():.6g}, {inner_vals.max():.6g}] vs boundary "
            f"[{lo:.6g}, {hi:.6g}]"
        )


def solve_dirichlet(
    domain: BoxDomain,
    boundary_values: Union[np.ndarray, dict],
    tolerance: float = DEFAULT_TOL,
) -> HarmonicField:
    """Harmonic extension of boundary data into the domain interior.

    ``boundary_values`` is either an array aligned with ``domain.boundary``
    or a mapping from boundary vertex id to value.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if isinstance(boundary_values, dict):
        g = np.array([boundary_values[int(b)] for b in domain.boundary], dtype=np.float64)
    else:
        g = np.asarray(boundary_values, dtype=np.float64)
    system = DirichletSystem(domain.graph, domain.interior, domain.boundary)
    values, info = system.solve(g, tol=tolerance)
    _max_principle_check(values, domain.interior, float(g.min()), float(g.max()), tolerance)
    return HarmonicField(domain=domain, values=values, residual=info.residual,
                         iterations=info.iterations)


def harmonic_measure(domain: BoxDomain, b: int, tolerance: float = DEFAULT_TOL) -> HarmonicField:
    """Harmonic extension of the indicator of one boundary vertex.

    The value at ``v`` is the probability the walk started at ``v`` first
    meets the boundary at ``b``.
    """
    hits = np.nonzero(domain.boundary == b)[0]
    if hits.size == 0:
        raise ValueError(f"vertex {b} is not on the domain boundary")
    g = np.zeros(len(domain.boundary))
    g[hits[0]] = 1.0
    return solve_dirichlet(domain, g, tolerance)


def harnack_constant(graph: CarpetGraph, n: int, tolerance: float = DEFAULT_TOL) -> HarnackReport:
    """Worst sup/inf ratio over the inner box, by exhaustive boundary sweep.

    For each boundary vertex ``b`` of the level-``n`` box, the harmonic
    measure ``h_b`` is solved and its max/min over the level-``n-1`` inner box
    recorded.  Every positive harmonic function on the box is a nonnegative
    combination of the ``h_b``, and a ratio of nonnegative combinations is
    bounded by the worst component ratio, so the sweep maximum is the exact
    Harnack constant of the box.  The oscillation ratio ``rho`` (worst inner
    oscillation over box supremum, same sweep) rides along in the report.
    """
    if not 1 <= n <= graph.level:
        raise ValueError(f"need 1 <= n <= graph level, got n={n}")
    part = box_vertices(graph, n)
    domain = BoxDomain(graph=graph, interior=part.interior, boundary=part.boundary, level=n)
    system = DirichletSystem(graph, domain.interior, domain.boundary)
    inner = part.inner
    box = part.box

    best_ratio = 1.0
    best_witness = (int(inner[0]), int(inner[0]), int(domain.boundary[0]))
    best_rho = 0.0
    rho_witness = best_witness
    max_residual = 0.0
    degenerate: list[tuple[int, int]] = []

    g = np.zeros(len(domain.boundary))
    for idx, b in enumerate(domain.boundary):
        g[idx] = 1.0
        values, info = system.solve(g, tol=tolerance)
        g[idx] = 0.0
        max_residual = max(max_residual, info.residual)

        inner_vals = values[inner]
        i_max = int(np.argmax(inner_vals))
        i_min = int(np.argmin(inner_vals))
        hi = float(inner_vals[i_max])
        lo = float(inner_vals[i_min])
        sup_box = float(values[box].max())

        if sup_box > 0.0:
            osc = (hi - lo) / sup_box
            if osc > best_rho:
                best_rho = osc
                rho_witness = (int(inner[i_max]), int(inner[i_min]), int(b))
        if lo < DEGENERATE_FLOOR:
            degenerate.append((int(b), int(inner[i_min])))
            continue
        ratio = hi / lo
        if ratio > best_ratio:
            best_ratio = ratio
            best_witness = (int(inner[i_max]), int(inner[i_min]), int(b))

    return HarnackReport(
        level=n,
        constant=best_ratio,
        rho=best_rho,
        witness=best_witness,
        rho_witness=rho_witness,
        max_residual=max_residual,
        degenerate=degenerate,
    )


def oscillation_rho(graph: CarpetGraph, n: int, tolerance: float = DEFAULT_TOL) -> float:
    """Worst inner oscillation relative to the box supremum, over the sweep.

    This maximizes only over harmonic-measure extreme rays; the osc/sup ratio
    is not linear, so this is an estimator of the contraction factor, not an
    exact optimum over all positive harmonic functions.
    """
    return harnack_constant(graph, n, tolerance).rho


def _distances(graph, x: int) -> np.ndarray:
    delta = graph.coords - graph.coords[x]
    return np.sqrt((delta.astype(np.float64) ** 2).sum(axis=1))


def _require_absorbing_shell(graph, x, radius):
    """The built graph must reach distance ``radius`` from ``x``."""
    dist = _distances(graph, x)
    if dist.max() < radius:
        hint = ""
        if isinstance(graph, CarpetGraph):
            k = graph.params.k
            need = int(np.ceil(np.log(graph.coords[x].max() + radius + 1) / np.log(k)))
            hint = f"; build level >= {need}"
        raise ValueError(f"no vertex at distance >= {radius:g} from vertex {x}{hint}")
    return dist


def hitting_probability(graph, spec: HittingSpec, y: int, tolerance: float = DEFAULT_TOL) -> float:
    """Probability the walk from ``y`` enters B(x, r) before leaving B(x, c2*r).

    Solves the Dirichlet problem with value 1 on vertices strictly within
    distance ``r`` of ``x`` and value 0 at distance >= ``c2 * r`` (ties at the
    exact radius count as outside the inner ball).
    """
    dist = _require_absorbing_shell(graph, spec.x, spec.c2 * spec.r)
    if dist[y] > spec.c1 * spec.r:
        raise ValueError(
            f"start vertex {y} at distance {dist[y]:.4g} exceeds c1*r = {spec.c1 * spec.r:.4g}"
        )
    inner = dist < spec.r
    outer = dist >= spec.c2 * spec.r
    if inner[y]:
        return 1.0
    if outer[y]:
        return 0.0
    fixed = np.nonzero(inner | outer)[0]
    unknown = np.nonzero(~(inner | outer))[0]
    g = inner[fixed].astype(np.float64)
    system = DirichletSystem(graph, unknown, fixed)
    values, _ = system.solve(g, tol=tolerance)
    _max_principle_check(values, unknown, 0.0, 1.0, tolerance)
    return float(values[y])


def expected_exit_time(
    graph,
    x: int,
    r: float,
    holding: float = 0.5,
    tolerance: float = DEFAULT_TOL,
) -> float:
    """Mean number of steps for the walk from ``x`` to reach distance ``r``.

    Solves the Poisson problem (L u = degree / (1 - holding) inside the ball,
    u = 0 at distance >= r); with the default holding probability 1/2 the
    answer is in lazy-walk steps.  A non-positive radius puts ``x`` itself on
    the exit set, so the answer is 0.
    """
    if not 0.0 <= holding < 1.0:
        raise ValueError("holding probability must lie in [0, 1)")
    if r <= 0:
        return 0.0
    dist = _require_absorbing_shell(graph, x, r)
    inside = dist < r
    unknown = np.nonzero(inside)[0]
    fixed = np.nonzero(~inside)[0]
    g = np.zeros(len(fixed))
    rhs = graph.degrees[unknown].astype(np.float64) / (1.0 - holding)
    system = DirichletSystem(graph, unknown, fixed)
    values, _ = system.solve(g, rhs=rhs, tol=tolerance)
    return float(values[x])


def hitting_pair_catalog(
    graph: CarpetGraph,
    r: float,
    c1: float = 2.0,
    c2: float = 4.0,
    count: int = 50,
    seed: int = 0,
) -> list[tuple[int, int]]:
    """Seeded catalog of (center, start) pairs for hitting-probability probes.

    Centers are drawn only where the whole outer ball stays clear of the
    window's high faces (so the built-graph walk agrees with the unbounded
    one); starts are drawn from the annulus r <= |y - x| <= c1*r, where the
    probe is nontrivial.
    """
    rng = derive_rng(seed, "hitting-pair-catalog", index=int(round(r)))
    side = graph.side
    margin = (graph.coords + c2 * r <= side - 1).all(axis=1)
    eligible = np.nonzero(margin)[0]
    if eligible.size == 0:
        raise ValueError(f"no admissible centers at r={r:g}; build a larger graph")
    pairs: list[tuple[int, int]] = []
    guard = 0
    while len(pairs) < count:
        guard += 1
        if guard > 100 * count:
            raise RuntimeError("pair sampling stalled; annulus too sparse")
        x = int(eligible[rng.integers(eligible.size)])
        dist = _distances(graph, x)
        ys = np.nonzero((dist >= r) & (dist <= c1 * r))[0]
        if ys.size == 0:
            continue
        y = int(ys[rng.integers(ys.size)])
        pairs.append((x, y))
    return pairs
