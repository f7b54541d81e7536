"""Electrical quantities on carpet graphs: energies, effective resistance,
resistance to infinity, and the capacity-inequality probe.

Every edge has unit conductance.  Effective resistance between two vertex
sets is 1/energy of the potential that is 1 on the source set, 0 on the
ground set, and harmonic elsewhere (the Dirichlet principle).  "Infinity" is
exhausted by grounding successively larger box boundaries and extrapolating
the geometric tail of the resistance sequence; in the recurrent regime the
sequence keeps growing and is flagged divergent instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .geometry import CarpetGraph, CarpetParams, VertexGraph, box_vertices, build_graph
from .linalg import DEFAULT_TOL, solve_fixed_values

__all__ = [
    "FlowField",
    "ResistanceReport",
    "CapacityReport",
    "HypothesisError",
    "dirichlet_energy",
    "potential_flow",
    "effective_resistance",
    "resistance_to_infinity",
    "face_resistance",
    "theorem5_check",
]

# Successive resistance increments must shrink at least this fast before the
# geometric extrapolation is trusted.
MIN_DECAY = 1.05


class HypothesisError(RuntimeError):
    """A check was invoked outside the regime where its statement applies."""


@dataclass
class FlowField:
    potential: np.ndarray
    energy: float


@dataclass
class ResistanceReport:
    target: np.ndarray
    levels: list
    resistances: list
    extrapolated: Optional[float]
    divergent: bool
    gamma: Optional[float] = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "target": [int(v) for v in self.target],
            "levels": list(self.levels),
            "resistances": list(self.resistances),
            "extrapolated": self.extrapolated,
            "divergent": self.divergent,
            "gamma": self.gamma,
            "note": self.note,
        }


def dirichlet_energy(graph: VertexGraph, f: np.ndarray) -> float:
    """Sum of squared potential differences over edges, in fixed edge order."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (graph.num_vertices,):
        raise ValueError("potential must assign a value to every vertex")
    edges = graph.edge_array()
    diffs = f[edges[:, 0]] - f[edges[:, 1]]
    return float(np.add.reduce(diffs * diffs))


def potential_flow(graph, source_ids, ground_ids, tolerance: float = DEFAULT_TOL) -> FlowField:
    """Unit-potential solve: 1 on the source set, 0 on the ground set."""
    source_ids = np.asarray(source_ids, dtype=np.int64)
    ground_ids = np.asarray(ground_ids, dtype=np.int64)
    fixed = np.concatenate([source_ids, ground_ids])
    values = np.concatenate([np.ones(len(source_ids)), np.zeros(len(ground_ids))])
    pot, _ = solve_fixed_values(graph, fixed, values, tol=tolerance)
    return FlowField(potential=pot, energy=dirichlet_energy(graph, pot))


def effective_resistance(graph, A, B, tolerance: float = DEFAULT_TOL) -> float:
    """Effective resistance between vertex sets A and B at unit conductance.

    Returns inf when no path joins the sets.
    """
    A = np.unique(np.asarray(A, dtype=np.int64))
    B = np.unique(np.asarray(B, dtype=np.int64))
    if A.size == 0 or B.size == 0:
        raise ValueError("resistance needs nonempty vertex sets")
    if np.intersect1d(A, B).size:
        raise ValueError("source and ground sets overlap")
    _, labels = connected_components(graph.adjacency(), directed=False)
    if not np.intersect1d(labels[A], labels[B]).size:
        return float("inf")
    flow = potential_flow(graph, A, B, tolerance=tolerance)
    return 1.0 / flow.energy


def resistance_to_infinity(
    graph: CarpetGraph,
    A,
    levels: Sequence[int],
    tolerance: float = DEFAULT_TOL,
) -> ResistanceReport:
    """Resistance from A to the boundaries of growing boxes, extrapolated.

    R_N grounds the face cells of the level-N box; whenever the target meets
    the ground the resistance is 0 by definition.  With at least three levels
    the geometric tail R_inf = R_last + delta * gamma / (1 - gamma) is
    extrapolated from the last two increments, unless the increments decay
    slower than the trust factor — then the sequence is flagged divergent
    (the recurrent regime) and no finite value is fabricated.
    """
    A = np.unique(np.asarray(A, dtype=np.int64))
    if A.size == 0:
        raise ValueError("target set is empty")
    levels = sorted(int(N) for N in levels)
    if not levels:
        raise ValueError("need at least one ground level")
    if levels[-1] > graph.level:
        raise ValueError(f"ground level {levels[-1]} exceeds the built graph")

    resistances = []
    for N in levels:
        ground = box_vertices(graph, N).boundary
        if np.intersect1d(A, ground).size:
            resistances.append(0.0)
        else:
            resistances.append(effective_resistance(graph, A, ground, tolerance=tolerance))

    if len(levels) < 3:
        return ResistanceReport(
            target=A, levels=levels, resistances=resistances,
            extrapolated=None, divergent=False,
            note="refused extrapolation: fewer than 3 levels",
        )

    d_prev = resistances[-2] - resistances[-3]
    d_last = resistances[-1] - resistances[-2]
    if d_last <= 0.0:
        # Sequence already flat (to solver noise); the last value is the limit.
        return ResistanceReport(
            target=A, levels=levels, resistances=resistances,
            extrapolated=resistances[-1], divergent=False, gamma=0.0,
            note="increments vanished; limit taken as the last value",
        )
    gamma = d_last / d_prev if d_prev > 0 else 1.0
    if gamma >= 1.0 / MIN_DECAY:
        return ResistanceReport(
            target=A, levels=levels, resistances=resistances,
            extrapolated=None, divergent=True, gamma=gamma,
            note=f"increments decay slower than {MIN_DECAY}x; recurrent regime",
        )
    extrapolated = resistances[-1] + d_last * gamma / (1.0 - gamma)
    return ResistanceReport(
        target=A, levels=levels, resistances=resistances,
        extrapolated=extrapolated, divergent=False, gamma=gamma,
    )


def face_resistance(params: CarpetParams, n: int, tolerance: float = DEFAULT_TOL) -> float:
    """Resistance across the level-n carpet between opposite coordinate faces.

    The source is every cell with first coordinate 0, the ground every cell
    with first coordinate k^n - 1.  At n = 0 the two faces coincide in the
    single cell, a degenerate short: 0 by convention.
    """
    if n == 0:
        return 0.0
    graph = build_graph(n, params)
    side = graph.side
    A = np.nonzero(graph.coords[:, 0] == 0)[0]
    B = np.nonzero(graph.coords[:, 0] == side - 1)[0]
    return effective_resistance(graph, A, B, tolerance=tolerance)


@dataclass
class CapacityReport:
    zeta: float
    ds: float
    sensitivity: float  # |d zeta / d ds|, error-amplification of the exponent
    sizes: list
    resistances: list
    constants: list
    max_constant: float
    spread: float
    reports: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta,
            "ds": self.ds,
            "sensitivity": self.sensitivity,
            "sizes": list(self.sizes),
            "resistances": list(self.resistances),
            "constants": list(self.constants),
            "max_constant": self.max_constant,
            "spread": self.spread,
            "reports": [r.to_dict() for r in self.reports],
        }


def theorem5_check(
    graph: CarpetGraph,
    targets: Sequence,
    ds: float,
    levels: Optional[Sequence[int]] = None,
    tolerance: float = DEFAULT_TOL,
) -> CapacityReport:
    """Capacity-inequality probe: c_i = |A_i| * R(A_i)^zeta across targets.

    Requires a transient estimate (ds > 2); zeta = ds / (ds - 2).  The spread
    max c_i / min c_i measures how uniform the bound's constant would have to
    be.  Divergent resistance sequences abort the check — they contradict the
    transience hypothesis.
    """
    if ds <= 2.0:
        raise HypothesisError(
            f"capacity check needs spectral dimension > 2, estimate is {ds:.4f}"
        )
    if levels is None:
        levels = list(range(2, graph.level + 1))
    zeta = ds / (ds - 2.0)
    sensitivity = 2.0 / (ds - 2.0) ** 2

    sizes = []
    resist = []
    constants = []
    reports = []
    for A in targets:
        rep = resistance_to_infinity(graph, A, levels, tolerance=tolerance)
        if rep.divergent or rep.extrapolated is None:
            raise HypothesisError(
                "resistance to infinity did not converge for a target; "
                "transience hypothesis looks violated"
            )
        sizes.append(int(len(np.unique(np.asarray(A)))))
        resist.append(float(rep.extrapolated))
        constants.append(sizes[-1] * resist[-1] ** zeta)
        reports.append(rep)
    return CapacityReport(
        zeta=zeta,
        ds=ds,
        sensitivity=sensitivity,
        sizes=sizes,
        resistances=resist,
        constants=constants,
        max_constant=max(constants),
        spread=max(constants) / min(constants),
        reports=reports,
    )
