"""Grids, angular quadrature, field containers, averages, and norms.

Everything here is immutable after construction and safe to share; the
operations are pure functions of their inputs.

Conventions for the slab reduction: space is the interval (0, length),
direction cosines live on mu in [-1, 1], and the angular average of a
distribution f is (1/2) * int_{-1}^{1} f dmu.  The outward normal is -1 at
the left wall and +1 at the right wall, so "incoming" means mu > 0 on the
left and mu < 0 on the right.  Norm integrals use the plain dmu measure
(total angular mass 2), trapezoid weights in time, and midpoint (cell
width) weights in space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

LEFT = "left"
RIGHT = "right"
SIDES = (LEFT, RIGHT)


class InvalidArgumentError(ValueError):
    """Raised when an operation precondition is violated."""


@dataclass(frozen=True)
class SlabGeometry:
    """The interval (0, length) with labelled walls and outward normals."""

    length: float = 1.0

    def __post_init__(self):
        if not self.length > 0:
            raise InvalidArgumentError(f"length must be positive, got {self.length}")

    def normal(self, side: str) -> float:
        if side == LEFT:
            return -1.0
        if side == RIGHT:
            return 1.0
        raise InvalidArgumentError(f"unknown side {side!r}")

    def wall_position(self, side: str) -> float:
        return 0.0 if side == LEFT else self.length


@dataclass(frozen=True)
class Quadrature:
    """Gauss-Legendre nodes/weights on [-1, 1] for the angular measure.

    Nodes are symmetric about 0 and never vanish (even count), so the
    grazing direction mu = 0 is never sampled.  ``half_weight`` is the
    discrete value of sum_{half} w |mu| (close to, but not exactly, 1/2);
    it is the normalization that makes outgoing-flux averages exact on
    direction-independent traces.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def half_weight(self) -> float:
        # sum over one half range of w*|mu|; symmetric by construction
        pos = self.nodes > 0
        return float(np.sum(self.weights[pos] * self.nodes[pos]))

    def incoming(self, side: str) -> np.ndarray:
        """Boolean mask of directions entering the domain through ``side``."""
        return self.nodes > 0 if side == LEFT else self.nodes < 0

    def outgoing(self, side: str) -> np.ndarray:
        return ~self.incoming(side)

    def reflect_index(self) -> np.ndarray:
        """Index map k -> k' with mu_{k'} = -mu_k (exact for symmetric nodes)."""
        return np.arange(self.n)[::-1]

    def average(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        """Angular mean (1/2) sum_k w_k f_k along ``axis``."""
        w = self.weights
        shape = [1] * values.ndim
        shape[axis] = w.size
        return 0.5 * np.sum(values * w.reshape(shape), axis=axis)


def build_quadrature(n: int) -> Quadrature:
    """Gauss-Legendre quadrature with an even number of nodes.

    Exact for polynomials of degree <= 2n-1; the even count keeps the node
    set symmetric and free of mu = 0.
    """
    if not isinstance(n, (int, np.integer)) or n < 2 or n % 2 != 0:
        raise InvalidArgumentError(f"quadrature order must be an even integer >= 2, got {n}")
    x, w = leggauss(int(n))
    # enforce exact +/- symmetry so odd moments cancel pairwise
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return Quadrature(nodes=x, weights=w)


@dataclass(frozen=True)
class SpatialGrid:
    """Strictly increasing cell edges on [0, length] with a grading tag.

    ``kind`` is "uniform" or "graded"; graded grids stretch geometrically
    away from each wall so that at least ``layer_cells`` cells lie inside
    ``layer_width`` of the wall.
    """

    edges: np.ndarray
    kind: str = "uniform"
    layer_width: Optional[float] = None
    layer_cells: int = 0

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise InvalidArgumentError("grid needs at least two edges")
        if not np.all(np.diff(e) > 0):
            raise InvalidArgumentError("grid edges must be strictly increasing")
        if e[0] != 0.0:
            raise InvalidArgumentError("first edge must be 0")
        object.__setattr__(self, "edges", e)
        e.setflags(write=False)

    @property
    def length(self) -> float:
        return float(self.edges[-1])

    @property
    def n_cells(self) -> int:
        return self.edges.size - 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def nodes(self) -> np.ndarray:
        """Wall-inclusive node set {0, cell centers, length} (heat/Poisson grid)."""
        return np.concatenate(([0.0], self.centers, [self.length]))

    def wall_distance(self, x: np.ndarray) -> np.ndarray:
        return np.minimum(x, self.length - x)

    def cells_within(self, side: str, width: float) -> int:
        """Number of whole cells inside ``width`` of the given wall."""
        if side == LEFT:
            return int(np.sum(self.edges[1:] <= width + 1e-15))
        return int(np.sum(self.edges[:-1] >= self.length - width - 1e-15))


def uniform_grid(n_cells: int, length: float = 1.0) -> SpatialGrid:
    if n_cells < 2:
        raise InvalidArgumentError("need at least two cells")
    return SpatialGrid(edges=np.linspace(0.0, length, n_cells + 1), kind="uniform")


def graded_grid(
    n_cells: int,
    layer_width: float,
    length: float = 1.0,
    layer_cells: int = 8,
    ratio: float = 1.3,
) -> SpatialGrid:
    """Boundary-graded grid resolving a wall layer of width ``layer_width``.

    ``layer_cells`` geometric cells (growth ``ratio``) span the layer at
    each wall, then continue growing until they reach the bulk width
    length/n_cells; the middle is filled uniformly.  Total cell count is
    n_cells plus whatever the graded collars need.
    """
    if not (0 < layer_width < length / 2):
        raise InvalidArgumentError("layer width must lie in (0, length/2)")
    if layer_cells < 1 or ratio <= 1.0:
        raise InvalidArgumentError("need layer_cells >= 1 and ratio > 1")
    h_bulk = length / n_cells
    d0 = layer_width * (ratio - 1.0) / (ratio**layer_cells - 1.0)
    d0 = min(d0, h_bulk)  # layer wider than bulk spacing needs no grading
    steps = [d0 * ratio**j for j in range(layer_cells)]
    while steps[-1] * ratio < h_bulk and sum(steps) < 0.4 * length:
        steps.append(steps[-1] * ratio)
    collar = np.cumsum(steps)
    collar = collar[collar < 0.45 * length]
    interior = length - 2.0 * collar[-1]
    n_mid = max(2, int(round(interior / h_bulk)))
    mid = np.linspace(collar[-1], length - collar[-1], n_mid + 1)
    edges = np.concatenate(([0.0], collar, mid[1:-1], length - collar[::-1], [length]))
    return SpatialGrid(
        edges=edges, kind="graded", layer_width=layer_width, layer_cells=layer_cells
    )


def refine_grid(grid: SpatialGrid, levels: int = 1) -> SpatialGrid:
    """Midpoint-split every cell ``levels`` times (self-similar refinement)."""
    edges = grid.edges
    for _ in range(levels):
        mids = 0.5 * (edges[1:] + edges[:-1])
        merged = np.empty(edges.size + mids.size)
        merged[0::2] = edges
        merged[1::2] = mids
        edges = merged
    return SpatialGrid(
        edges=edges,
        kind=grid.kind,
        layer_width=grid.layer_width,
        layer_cells=grid.layer_cells * 2**levels,
    )


def trapezoid_weights(t: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights for samples at (possibly nonuniform) t."""
    t = np.asarray(t, dtype=float)
    if t.size == 1:
        return np.ones(1)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


@dataclass(frozen=True)
class PhaseField:
    """Values on (time) x cell x direction, with grid/quadrature references."""

    values: np.ndarray  # (nt, nx, nmu) or (nx, nmu)
    grid: SpatialGrid
    quadrature: Quadrature
    eps: float = 1.0
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[None, :, :]
        if v.ndim != 3:
            raise InvalidArgumentError("phase field values must be (nt, nx, nmu)")
        nt, nx, nmu = v.shape
        if nx != self.grid.n_cells or nmu != self.quadrature.n:
            raise InvalidArgumentError(
                f"shape {v.shape} inconsistent with grid ({self.grid.n_cells} cells) "
                f"and quadrature ({self.quadrature.n} nodes)"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("phase field values must be finite")
        t = self.times
        if t is None:
            t = np.zeros(nt) if nt == 1 else np.arange(nt, dtype=float)
        t = np.asarray(t, dtype=float)
        if t.size != nt:
            raise InvalidArgumentError("times length must match the leading axis")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", t)


@dataclass(frozen=True)
class ScalarField:
    """Direction-independent values on (time) x cell."""

    values: np.ndarray  # (nt, nx) or (nx,)
    grid: SpatialGrid
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != self.grid.n_cells:
            raise InvalidArgumentError("scalar field values must be (nt, n_cells)")
        t = self.times
        if t is None:
            t = np.zeros(v.shape[0]) if v.shape[0] == 1 else np.arange(v.shape[0], dtype=float)
        t = np.asarray(t, dtype=float)
        if t.size != v.shape[0]:
            raise InvalidArgumentError("times length must match the leading axis")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", t)


def velocity_average(f: PhaseField) -> ScalarField:
    """Angular mean of a phase field; the fluctuation f - fbar has zero mean."""
    vbar = f.quadrature.average(f.values, axis=-1)
    return ScalarField(values=vbar, grid=f.grid, times=f.times)


def boundary_half_range_average(trace: np.ndarray, quad: Quadrature, side: str) -> float:
    """Outgoing-flux average of a wall trace.

    Returns sum_{outgoing} w |mu| trace / sum_{outgoing} w |mu|, the discrete
    counterpart of the flux-weighted mean with unit normalization.  The
    divisor is within half-range quadrature error of 1/2, so this agrees
    with 2*sum w|mu| trace up to that error while being exact on
    direction-independent traces.
    """
    trace = np.asarray(trace, dtype=float)
    out = quad.outgoing(side)
    if not np.any(out):
        raise InvalidArgumentError("empty outgoing half range")
    w = quad.weights[out] * np.abs(quad.nodes[out])
    if trace.size == quad.n:
        trace = trace[out]
    elif trace.size != out.sum():
        raise InvalidArgumentError("trace length matches neither the full nor half range")
    return float(np.sum(w * trace) / np.sum(w))


def _space_weights(grid: SpatialGrid, on_nodes: bool) -> np.ndarray:
    if on_nodes:
        return trapezoid_weights(grid.nodes)
    return grid.widths


def norms(f, kind: str, beta: float = 0.0) -> float:
    """Trajectory norms used by the estimates.

    kind is one of ``supt_l2`` (max over time of the bulk L2 norm),
    ``l2_spacetime`` (L2 over time x space x direction), or
    ``l2_boundary_trace`` (handled by the transport module's trace helper,
    rejected here).  ``beta`` applies the weight e^{beta t} to f before
    measuring.
    """
    if kind == "l2_boundary_trace":
        raise InvalidArgumentError("boundary trace norms need wall traces; see transport.trace_norm")
    if kind not in ("supt_l2", "l2_spacetime"):
        raise InvalidArgumentError(f"unknown norm kind {kind!r}")
    if isinstance(f, PhaseField):
        v = f.values
        wx = f.grid.widths
        wmu = f.quadrature.weights
        cell_sq = np.einsum("txm,x,m->t", v * v, wx, wmu)
    elif isinstance(f, ScalarField):
        v = f.values
        wx = f.grid.widths
        # direction-constant fields carry the full angular mass 2
        cell_sq = 2.0 * np.einsum("tx,x->t", v * v, wx)
    else:
        raise InvalidArgumentError(f"unsupported field type {type(f)!r}")
    t = f.times
    if beta:
        cell_sq = cell_sq * np.exp(2.0 * beta * t)
    if kind == "supt_l2":
        return float(np.sqrt(np.max(cell_sq)))
    wt = trapezoid_weights(t)
    return float(np.sqrt(np.sum(wt * cell_sq)))
