"""Lazy random-walk heat kernel: iteration, exponent fits, regime fits.

The walk holds in place with probability 1/2 (killing bipartite parity) and
otherwise moves to a uniformly random neighbor.  On-diagonal decay
p_t(x,x) ~ t^(-d_s/2) yields the spectral dimension; exit-time scaling
E[tau(x,r)] ~ r^(d_w) yields the walk dimension; off-diagonal decay is fitted
separately in the near regime (|x-y| <= t) and the far regime (|x-y| > t).

All kernel work is sparse operator application — memory stays O(|V|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import CarpetGraph, VertexGraph
from .harmonic import expected_exit_time
from .linalg import DEFAULT_TOL
from .seeding import derive_rng

__all__ = [
    "TransitionOperator",
    "HeatKernelRow",
    "ExponentEstimate",
    "RegimeFitReport",
    "FitError",
    "step",
    "heat_kernel_row",
    "central_vertex",
    "saturation_time",
    "dyadic_times",
    "estimate_ds",
    "estimate_dw",
    "regime_fit",
    "monte_carlo_walk",
    "sample_exit_times",
]

PROB_FLOOR = 1e-300


class FitError(RuntimeError):
    """Not enough usable points for a slope estimate."""


@dataclass
class TransitionOperator:
    """One-step operator of the lazy walk on a vertex graph."""

    graph: VertexGraph
    laziness: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.laziness < 1.0:
            raise ValueError("laziness must lie in [0, 1)")
        deg = self.graph.degrees.astype(np.float64)
        # Isolated vertices (degree 0) just hold; avoid dividing by zero.
        self._inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
        self._isolated = deg == 0

    def step(self, dist: np.ndarray) -> np.ndarray:
        """Apply one lazy-walk step to a probability vector."""
        dist = np.asarray(dist, dtype=np.float64)
        adj = self.graph.adjacency()
        move = adj @ (dist * self._inv_deg)
        out = self.laziness * dist + (1.0 - self.laziness) * move
        if self._isolated.any():
            out = out + (1.0 - self.laziness) * np.where(self._isolated, dist, 0.0)
        return out


@dataclass
class HeatKernelRow:
    source: int
    time: int
    probs: np.ndarray


def step(op: TransitionOperator, dist: np.ndarray) -> np.ndarray:
    return op.step(dist)


def heat_kernel_row(op: TransitionOperator, x: int, t: int) -> HeatKernelRow:
    """t-fold application of the step operator to a point mass at ``x``."""
    if t < 0:
        raise ValueError("time must be a nonnegative integer")
    dist = np.zeros(op.graph.num_vertices)
    dist[x] = 1.0
    for _ in range(int(t)):
        dist = op.step(dist)
    total = dist.sum()
    if abs(total - 1.0) > 1e-12:
        raise RuntimeError(f"kernel row lost mass: sum = {total!r} at t = {t}")
    return HeatKernelRow(source=int(x), time=int(t), probs=dist)


def central_vertex(graph: CarpetGraph) -> int:
    """Surviving cell farthest from the window boundary (ties: lowest id).

    Default source for on-diagonal estimates, minimizing boundary
    contamination of the kernel.
    """
    coords = graph.coords
    side = graph.side
    # distance from cell center to the nearest window wall, doubled to stay
    # in integers: min(2c+1, 2(side-c)-1) per axis
    near = np.minimum(2 * coords + 1, 2 * (side - coords) - 1).min(axis=1)
    return int(np.argmax(near))


def saturation_time(graph: VertexGraph) -> int:
    """Heuristic cap before finite-size saturation: (diameter/4)^2."""
    if isinstance(graph, CarpetGraph):
        d = graph.params.d
        diam = (graph.side - 1) * math.sqrt(d)
    else:
        span = graph.coords.max(axis=0) - graph.coords.min(axis=0)
        diam = float(np.sqrt((span.astype(np.float64) ** 2).sum()))
    return max(1, int((diam / 4.0) ** 2))


def dyadic_times(t_lo: int, t_hi: int) -> list[int]:
    times = []
    t = 1
    while t <= t_hi:
        if t >= t_lo:
            times.append(t)
        t *= 2
    return times


@dataclass
class ExponentEstimate:
    value: float
    standard_error: float
    window: tuple[float, float]
    r_squared: float
    n_points: int
    points: list = field(default_factory=list)
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "standard_error": self.standard_error,
            "window": list(self.window),
            "r_squared": self.r_squared,
            "n_points": self.n_points,
            "points": [list(p) for p in self.points],
            "degenerate": self.degenerate,
        }


def _slope_fit(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float]:
    """OLS slope, slope standard error, and r^2 for y against x."""
    n = len(xs)
    xbar = xs.mean()
    ybar = ys.mean()
    sxx = float(((xs - xbar) ** 2).sum())
    if sxx == 0.0:
        raise FitError("all abscissae coincide; cannot fit a slope")
    slope = float(((xs - xbar) * (ys - ybar)).sum() / sxx)
    resid = ys - (ybar + slope * (xs - xbar))
    ss_res = float((resid ** 2).sum())
    ss_tot = float(((ys - ybar) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    if n > 2:
        se = math.sqrt(ss_res / (n - 2) / sxx)
    else:
        se = 0.0
    return slope, se, r2


def estimate_ds(
    op: TransitionOperator,
    x: Optional[int] = None,
    times: Optional[Sequence[int]] = None,
    window: Optional[tuple[int, int]] = None,
    max_time: Optional[int] = None,
) -> ExponentEstimate:
    """Spectral dimension from on-diagonal decay: d_s = -2 * slope.

    Fits log p_t(x,x) against log t over dyadic times inside the window,
    capped at the saturation heuristic.  Fewer than 4 usable points is a
    fit error; a flat series is returned with value 0 and flagged degenerate.
    """
    graph = op.graph
    if x is None:
        if not isinstance(graph, CarpetGraph):
            raise ValueError("source vertex required for non-carpet graphs")
        x = central_vertex(graph)
    cap = max_time if max_time is not None else saturation_time(graph)
    if times is None:
        lo = window[0] if window else 16
        hi = min(window[1], cap) if window else cap
        times = dyadic_times(lo, hi)
    else:
        times = sorted(int(t) for t in times)
        if window:
            times = [t for t in times if window[0] <= t <= window[1]]
        times = [t for t in times if t <= cap]
    if len(times) < 4:
        raise FitError(f"need at least 4 fit points, have {len(times)}")

    diag = []
    dist = np.zeros(graph.num_vertices)
    dist[x] = 1.0
    t_cur = 0
    for t in times:
        for _ in range(t - t_cur):
            dist = op.step(dist)
        t_cur = t
        diag.append((t, float(dist[x])))

    usable = [(t, p) for t, p in diag if p > PROB_FLOOR]
    if len(usable) < 4:
        raise FitError(f"only {len(usable)} points above the probability floor")
    xs = np.log([t for t, _ in usable])
    ys = np.log([p for _, p in usable])
    if np.allclose(ys, ys[0]):
        return ExponentEstimate(
            value=0.0, standard_error=0.0,
            window=(usable[0][0], usable[-1][0]), r_squared=1.0,
            n_points=len(usable), points=usable, degenerate=True,
        )
    slope, se, r2 = _slope_fit(xs, ys)
    return ExponentEstimate(
        value=-2.0 * slope,
        standard_error=2.0 * se,
        window=(usable[0][0], usable[-1][0]),
        r_squared=r2,
        n_points=len(usable),
        points=usable,
    )


def estimate_dw(
    graph: VertexGraph,
    x: Optional[int] = None,
    radii: Optional[Sequence[float]] = None,
    holding: float = 0.5,
    tolerance: float = DEFAULT_TOL,
) -> ExponentEstimate:
    """Walk dimension from exit-time scaling: slope of log E[tau] vs log r.

    Exit times come from deterministic Poisson solves, not sampling.  For
    carpet graphs the default radii are k^m up to the window margin.
    """
    if x is None:
        if not isinstance(graph, CarpetGraph):
            raise ValueError("source vertex required for non-carpet graphs")
        x = central_vertex(graph)
    if radii is None:
        if not isinstance(graph, CarpetGraph):
            raise ValueError("radii required for non-carpet graphs")
        k = graph.params.k
        room = float(graph.side - 1 - graph.coords[x].max())
        radii = [float(k ** m) for m in range(1, graph.level + 1) if k ** m <= room]
    radii = [float(r) for r in radii]
    if len(radii) < 3:
        raise FitError(f"need at least 3 radii, have {len(radii)}")
    taus = [expected_exit_time(graph, x, r, holding=holding, tolerance=tolerance)
            for r in radii]
    if any(t <= 0 for t in taus):
        raise FitError("non-positive exit time in the radius list")
    xs = np.log(radii)
    ys = np.log(taus)
    slope, se, r2 = _slope_fit(xs, ys)
    return ExponentEstimate(
        value=slope,
        standard_error=se,
        window=(min(radii), max(radii)),
        r_squared=r2,
        n_points=len(radii),
        points=list(zip(radii, taus)),
    )


@dataclass
class RegimeFitReport:
    """Near/far off-diagonal decay fits against their model abscissae.

    ``sub_gaussian`` covers pairs with |x-y| <= t (abscissa
    (|x-y|^d_w / t)^(1/(d_w-1)), ordinate -log(p * t^(d_s/2))); ``gaussian``
    covers |x-y| > t (abscissa |x-y|^2 / t, ordinate -log p).  An empty
    regime is reported as None (not-fit), never an error.
    """

    sub_gaussian: Optional[ExponentEstimate]
    gaussian: Optional[ExponentEstimate]
    n_sub: int
    n_gauss: int
    n_floor_excluded: int


def regime_fit(
    op: TransitionOperator,
    x: int,
    pairs: Sequence[tuple[int, int]],
    ds: float,
    dw: float,
) -> RegimeFitReport:
    """Fit both heat-kernel decay regimes over (target, time) pairs."""
    if dw <= 1.0:
        raise ValueError("walk dimension must exceed 1")
    graph = op.graph
    coords = graph.coords.astype(np.float64)
    by_time: dict[int, list[int]] = {}
    for y, t in pairs:
        by_time.setdefault(int(t), []).append(int(y))

    sub_pts: list[tuple[float, float]] = []
    gauss_pts: list[tuple[float, float]] = []
    floored = 0

    dist = np.zeros(graph.num_vertices)
    dist[x] = 1.0
    t_cur = 0
    for t in sorted(by_time):
        if t < t_cur:
            raise ValueError("times must be nonnegative")
        for _ in range(t - t_cur):
            dist = op.step(dist)
        t_cur = t
        for y in by_time[t]:
            sep = float(np.linalg.norm(coords[y] - coords[x]))
            p = float(dist[y])
            if p <= PROB_FLOOR:
                floored += 1
                continue
            if sep <= t:
                absc = (sep ** dw / t) ** (1.0 / (dw - 1.0))
                sub_pts.append((absc, -math.log(p * t ** (ds / 2.0))))
            else:
                gauss_pts.append((sep ** 2 / t, -math.log(p)))

    def _regime(points):
        if len(points) < 2:
            return None
        xs = np.array([a for a, _ in points])
        ys = np.array([b for _, b in points])
        slope, se, r2 = _slope_fit(xs, ys)
        return ExponentEstimate(
            value=slope, standard_error=se,
            window=(float(xs.min()), float(xs.max())),
            r_squared=r2, n_points=len(points), points=points,
        )

    return RegimeFitReport(
        sub_gaussian=_regime(sub_pts),
        gaussian=_regime(gauss_pts),
        n_sub=len(sub_pts),
        n_gauss=len(gauss_pts),
        n_floor_excluded=floored,
    )


def monte_carlo_walk(
    graph: VertexGraph,
    x: int,
    steps: int,
    seed: int,
    walker: int = 0,
    holding: float = 0.5,
) -> np.ndarray:
    """One seeded lazy-walk trajectory of ``steps`` moves, starting at ``x``."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    rng = derive_rng(seed, "monte-carlo-walk", index=walker)
    path = np.empty(steps + 1, dtype=np.int64)
    path[0] = x
    pos = int(x)
    indptr = graph.indptr
    indices = graph.indices
    for i in range(steps):
        if rng.random() >= holding:
            lo, hi = indptr[pos], indptr[pos + 1]
            if hi > lo:
                pos = int(indices[lo + rng.integers(hi - lo)])
        path[i + 1] = pos
    return path


def sample_exit_times(
    graph: VertexGraph,
    x: int,
    r: float,
    trials: int,
    seed: int,
    holding: float = 0.5,
    max_steps: int = 1_000_000,
) -> np.ndarray:
    """Batched Monte Carlo exit times from B(x, r); cross-check for the solver."""
    delta = (graph.coords - graph.coords[x]).astype(np.float64)
    dist = np.sqrt((delta ** 2).sum(axis=1))
    inside = dist < r
    if not inside.any() or inside.all():
        raise ValueError("ball is empty or covers the whole graph")
    rng = derive_rng(seed, "exit-time-sample")
    pos = np.full(trials, x, dtype=np.int64)
    exit_at = np.zeros(trials, dtype=np.int64)
    active = np.ones(trials, dtype=bool)
    indptr = graph.indptr
    indices = graph.indices
    deg = graph.degrees
    for t in range(1, max_steps + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        coins = rng.random(idx.size)
        draws = rng.random(idx.size)
        movers = coins >= holding
        mi = idx[movers]
        if mi.size:
            offs = (draws[movers] * deg[pos[mi]]).astype(np.int64)
            pos[mi] = indices[indptr[pos[mi]] + offs]
        newly_out = ~inside[pos[idx]]
        exit_at[idx[newly_out]] = t
        active[idx[newly_out]] = False
    if active.any():
        raise RuntimeError(f"{int(active.sum())} walkers still inside after {max_steps} steps")
    return exit_at
