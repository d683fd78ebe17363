"""Tensor grids on boxes, grid functions, discrete X-gradients and norms.

Scalar functions live on nodes; gradients, fluxes and quadrature live on
cells. One discrete gradient is used everywhere (solver, fluxes, norms) so
discrete duality stays consistent: per cell, the forward difference along
each axis averaged over the cell's parallel edges (the gradient of the
multilinear interpolant at the cell center), multiplied by the coefficient
matrix evaluated at the cell center. Degenerate points of the family are
kept as-is; nothing is regularized here.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .fields import VectorFieldFamily


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box discretized by N nodes per axis (N >= 3).

    box is ((a_1, b_1), ..., (a_n, b_n)); spacing per axis is
    (b_i - a_i)/(N_i - 1). Immutable; safe to share.
    """

    box: tuple
    shape: tuple

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        shape = tuple(int(k) for k in self.shape)
        if len(box) != len(shape):
            raise ConfigurationError("box and shape must have the same number of axes")
        if any(k < 3 for k in shape):
            raise ConfigurationError(f"need at least 3 nodes per axis, got {shape}")
        if any(hi <= lo for lo, hi in box):
            raise ConfigurationError(f"box axes must have positive length, got {box}")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "shape", shape)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (k - 1) for (lo, hi), k in zip(self.box, self.shape))

    @property
    def cells(self) -> tuple:
        return tuple(k - 1 for k in self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    # nodal quadrature weight of an interior node (uniform tensor grid)
    node_volume = cell_volume

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.box]))

    def axes(self):
        """Node coordinates per axis."""
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.box, self.shape)]

    def cell_axes(self):
        """Cell-center coordinates per axis."""
        return [0.5 * (ax[:-1] + ax[1:]) for ax in self.axes()]

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape self.shape + (ndim,)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_centers(self) -> np.ndarray:
        """All cell-center coordinates, shape self.cells + (ndim,)."""
        mesh = np.meshgrid(*self.cell_axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def interior(self) -> tuple:
        return tuple(slice(1, -1) for _ in self.shape)

    def boundary_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        mask[self.interior()] = False
        return mask

    def refined(self, factor: int) -> "Grid":
        """Grid with each cell split `factor` times per axis (nodes nest)."""
        if factor < 1:
            raise ConfigurationError("refinement factor must be >= 1")
        return Grid(self.box, tuple((k - 1) * factor + 1 for k in self.shape))


@dataclass
class DiscreteFunction:
    """Nodal scalar function on a grid.

    With zero_boundary=True the boundary nodes carry exactly 0 (the discrete
    counterpart of zero boundary values); this is enforced at construction.
    Treat instances as immutable values.
    """

    grid: Grid
    values: np.ndarray
    zero_boundary: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ContractViolation(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )
        if self.zero_boundary:
            v = self.values.copy()
            v[self.grid.boundary_mask()] = 0.0
            self.values = v

    @classmethod
    def zeros(cls, grid: Grid, zero_boundary: bool = True) -> "DiscreteFunction":
        return cls(grid, np.zeros(grid.shape), zero_boundary)

    @classmethod
    def from_callable(cls, grid: Grid, fn, zero_boundary: bool = False) -> "DiscreteFunction":
        """Sample fn(points (..., n)) -> (...) at the nodes."""
        return cls(grid, np.asarray(fn(grid.nodes()), dtype=float), zero_boundary)

    def copy(self) -> "DiscreteFunction":
        return DiscreteFunction(self.grid, self.values.copy(), self.zero_boundary)

    def __add__(self, other):
        self._check(other)
        return DiscreteFunction(
            self.grid, self.values + other.values, self.zero_boundary and other.zero_boundary
        )

    def __sub__(self, other):
        self._check(other)
        return DiscreteFunction(
            self.grid, self.values - other.values, self.zero_boundary and other.zero_boundary
        )

    def __mul__(self, scalar):
        return DiscreteFunction(self.grid, self.values * float(scalar), self.zero_boundary)

    __rmul__ = __mul__

    def _check(self, other):
        if other.grid is not self.grid and other.grid != self.grid:
            raise ContractViolation("operands live on different grids")


@dataclass
class FluxField:
    """Per-cell m-vector field (X-gradients, momenta a(., Xu))."""

    grid: Grid
    values: np.ndarray  # shape grid.cells + (m,)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:-1] != self.grid.cells:
            raise ContractViolation(
                f"flux shape {self.values.shape} does not match cells {self.grid.cells}"
            )

    @property
    def m(self) -> int:
        return self.values.shape[-1]


def cell_average(values: np.ndarray) -> np.ndarray:
    """Average nodal values over each cell's 2^n corners."""
    out = values
    for axis in range(values.ndim):
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        out = 0.5 * (out[tuple(lo)] + out[tuple(hi)])
    return out


def cell_gradient(values: np.ndarray, spacing) -> np.ndarray:
    """Euclidean gradient per cell, shape cells + (ndim,).

    Along each axis: first-order forward differences averaged over the
    cell's parallel edges; exact for multilinear (hence affine) data.
    """
    nd = values.ndim
    comps = []
    for d in range(nd):
        g = np.diff(values, axis=d) / spacing[d]
        for e in range(nd):
            if e == d:
                continue
            lo = [slice(None)] * nd
            hi = [slice(None)] * nd
            lo[e] = slice(None, -1)
            hi[e] = slice(1, None)
            g = 0.5 * (g[tuple(lo)] + g[tuple(hi)])
        comps.append(g)
    return np.stack(comps, axis=-1)


def discrete_x_gradient(family: VectorFieldFamily, u: DiscreteFunction) -> FluxField:
    """X-gradient of a grid function: C(cell center) times the cell gradient."""
    grid = u.grid
    if grid.ndim != family.n:
        raise ContractViolation(
            f"grid is {grid.ndim}-dimensional, family lives in R^{family.n}"
        )
    du = cell_gradient(u.values, grid.spacing)
    c = family.coeff_at(grid.cell_centers())
    return FluxField(grid, np.einsum("...mn,...n->...m", c, du))


def lp_norm(v, p: float) -> float:
    """L^p norm by midpoint/cell-volume quadrature.

    DiscreteFunction: cell-averaged nodal values; FluxField: Euclidean
    magnitude per cell.
    """
    if p < 1:
        raise ContractViolation(f"p must be >= 1, got {p}")
    if isinstance(v, DiscreteFunction):
        mag = np.abs(cell_average(v.values))
        vol = v.grid.cell_volume
    elif isinstance(v, FluxField):
        mag = np.linalg.norm(v.values, axis=-1)
        vol = v.grid.cell_volume
    else:
        raise ContractViolation(f"cannot take lp_norm of {type(v).__name__}")
    return float((np.sum(mag**p) * vol) ** (1.0 / p))


def pairing(density: DiscreteFunction, v: DiscreteFunction) -> float:
    """Duality pairing <density, v> by nodal quadrature.

    Densities act on zero-boundary functions; boundary nodes contribute
    nothing because v vanishes there.
    """
    vals = density.values * v.values
    if not v.zero_boundary:
        vals = vals.copy()
        vals[v.grid.boundary_mask()] = 0.0
    return float(np.sum(vals) * density.grid.node_volume)


def function_to_csv(u: DiscreteFunction, path) -> None:
    """Write node coordinates and values, one row per node, with header."""
    path = Path(path)
    pts = u.grid.nodes().reshape(-1, u.grid.ndim)
    vals = u.values.reshape(-1, 1)
    header = ",".join([f"x{d}" for d in range(u.grid.ndim)] + ["value"])
    np.savetxt(
        path, np.hstack([pts, vals]), delimiter=",", header=header, comments="", fmt="%.17g"
    )


def function_to_binary(u: DiscreteFunction, path) -> None:
    """Write raw little-endian float64 values plus a JSON header next to them.

    path gets the raw bytes (C order); path.with_suffix('.json') records
    shape, box, spacing, dtype and byte order.
    """
    path = Path(path)
    u.values.astype("<f8").tofile(path)
    header = {
        "shape": list(u.grid.shape),
        "box": [list(b) for b in u.grid.box],
        "spacing": list(u.grid.spacing),
        "dtype": "float64",
        "byte_order": "little-endian",
        "order": "C",
        "zero_boundary": u.zero_boundary,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")


def function_from_binary(path) -> DiscreteFunction:
    """Read a function written by function_to_binary."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    grid = Grid(tuple(tuple(b) for b in header["box"]), tuple(header["shape"]))
    values = np.fromfile(path, dtype="<f8").reshape(grid.shape)
    return DiscreteFunction(grid, values, header.get("zero_boundary", False))
