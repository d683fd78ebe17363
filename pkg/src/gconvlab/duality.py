"""Dual-space machinery: stiffness assembly, Riesz map, sine dictionary.

The discrete X-Laplacian (p = 2 structure) built here is used in three
roles: exact Riesz map for the p = 2 dual norm, fixed preconditioner for the
monotone solver (with a tiny mass regularization applied only inside the
preconditioner, never in the operator), and assembly backend for operator
application. For p > 2 the dual norm is a lower-bound estimate against a
fixed dictionary of tensor-product sine modes and is reported as an
estimate.
"""

import itertools
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractViolation, DegenerateSystem
from .fields import DEFAULT_SEED, VectorFieldFamily
from .grids import DiscreteFunction, FluxField, Grid, lp_norm

logger = logging.getLogger(__name__)

# Default mass-term scale for the preconditioner regularization.
PRECOND_REG_SCALE = 1e-10


def gradient_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse cell-gradient operator, shape (ndim * n_cells, n_nodes).

    Row d * n_cells + c holds the d-component of the gradient on cell c
    (C-order flattening), matching grids.cell_gradient.
    """
    nd = grid.ndim
    ncells = grid.n_cells
    idx = np.indices(grid.cells).reshape(nd, -1)  # (nd, ncells)
    cell_rows = np.arange(ncells)
    w = 1.0 / (2 ** (nd - 1))
    rows, cols, vals = [], [], []
    for d in range(nd):
        hd = grid.spacing[d]
        for corner in itertools.product((0, 1), repeat=nd):
            node = idx + np.asarray(corner)[:, None]
            flat = np.ravel_multi_index(node, grid.shape)
            sign = 1.0 if corner[d] == 1 else -1.0
            rows.append(d * ncells + cell_rows)
            cols.append(flat)
            vals.append(np.full(ncells, sign * w / hd))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nd * ncells, grid.n_nodes),
    )
    return mat.tocsr()


def x_gradient_matrix(family: VectorFieldFamily, grid: Grid) -> sp.csr_matrix:
    """Sparse X-gradient operator B, shape (m * n_cells, n_nodes).

    Row j * n_cells + c is the j-th component of C(center) times the cell
    gradient on cell c, so B @ u.ravel() computes all X-gradients at once.
    """
    g = gradient_matrix(grid)
    ncells = grid.n_cells
    c = family.coeff_at(grid.cell_centers()).reshape(ncells, family.m, family.n)
    cell_rows = np.arange(ncells)
    rows, cols, vals = [], [], []
    for j in range(family.m):
        for d in range(family.n):
            rows.append(j * ncells + cell_rows)
            cols.append(d * ncells + cell_rows)
            vals.append(c[:, j, d])
    chat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(family.m * ncells, family.n * ncells),
    )
    out = (chat.tocsr() @ g).tocsr()
    out.eliminate_zeros()
    return out


class XLaplacian:
    """Assembled p = 2 X-stiffness with factorization helpers.

    Holds the X-gradient matrix B, the interior-node stiffness
    R = B^T vol B, an exact factorization for the Riesz map and regularized
    factorizations for preconditioning (mass shift eps = reg_scale * |R|_max,
    applied only here).
    """

    def __init__(self, family: VectorFieldFamily, grid: Grid, reg_scale: float = PRECOND_REG_SCALE):
        self.family = family
        self.grid = grid
        self.reg_scale = float(reg_scale)
        self.B = x_gradient_matrix(family, grid)
        self.interior_idx = np.where(~grid.boundary_mask().ravel())[0]
        vol = grid.cell_volume
        R = (self.B.T @ (vol * self.B)).tocsc()
        self.R_ii = R[:, self.interior_idx].tocsr()[self.interior_idx, :].tocsc()
        self._reg_eps = self.reg_scale * float(np.abs(self.R_ii).max())
        self._riesz_lu = None
        self._precond_lus = {}

    # -- gradient / assembly ------------------------------------------------

    def x_gradient_values(self, values: np.ndarray) -> np.ndarray:
        """All cell X-gradients of nodal values, shape cells + (m,)."""
        flat = self.B @ values.ravel()
        ncells = self.grid.n_cells
        return flat.reshape(self.family.m, ncells).T.reshape(
            self.grid.cells + (self.family.m,)
        )

    def assemble_flux(self, flux: np.ndarray) -> np.ndarray:
        """Weak-form vector sum_cells (flux, X e_i) vol, over all nodes (flat)."""
        ncells = self.grid.n_cells
        flat = flux.reshape(ncells, self.family.m).T.ravel()
        return self.B.T @ (flat * self.grid.cell_volume)

    # -- factorizations -----------------------------------------------------

    def riesz_solve(self, rhs_interior: np.ndarray) -> np.ndarray:
        """Exact solve R w = rhs on interior nodes (no regularization)."""
        if self._riesz_lu is None:
            try:
                self._riesz_lu = spla.factorized(self.R_ii)
            except RuntimeError as exc:
                raise DegenerateSystem(f"X-stiffness factorization failed: {exc}") from exc
        return self._riesz_lu(rhs_interior)

    def precond_solve(self, rhs_interior: np.ndarray, shift: float = 0.0) -> np.ndarray:
        """Regularized solve (R + shift I + eps I) w = rhs on interior nodes.

        shift carries the implicit-step mass term vol/tau; eps is the fixed
        regularization. Factorizations are cached per shift.
        """
        key = float(shift)
        lu = self._precond_lus.get(key)
        if lu is None:
            mat = self.R_ii + sp.identity(
                self.R_ii.shape[0], format="csc"
            ) * (self._reg_eps + key)
            try:
                lu = spla.factorized(mat)
            except RuntimeError as exc:
                raise DegenerateSystem(
                    f"preconditioner factorization failed even with regularization "
                    f"eps={self._reg_eps:g}: {exc}"
                ) from exc
            self._precond_lus[key] = lu
        return lu(rhs_interior)

    def dual_norm_p2(self, assembled_interior: np.ndarray) -> float:
        """Exact discrete V' norm at p = 2: sqrt(<r, Riesz r>)."""
        w = self.riesz_solve(assembled_interior)
        return float(np.sqrt(max(assembled_interior @ w, 0.0)))


class SineDictionary:
    """Tensor-product sine modes on the grid's box.

    Mode (k_1, ..., k_n), k_d in 1..modes_per_axis, is the product of
    sin(k_d pi (x_d - a_d)/(b_d - a_d)); all modes vanish on the boundary.
    Used for weak-convergence tests of fluxes and for the p > 2 dual-norm
    estimate.
    """

    _CELL_AXES = "abc"
    _MODE_AXES = "uvw"

    def __init__(self, grid: Grid, modes_per_axis: int = 16):
        if grid.ndim > 3:
            raise ContractViolation("sine dictionary supports up to 3 axes")
        self.grid = grid
        self.modes_per_axis = int(min(modes_per_axis, min(grid.cells) - 1))
        if self.modes_per_axis < 1:
            raise ContractViolation("grid too coarse for any sine mode")
        ks = np.arange(1, self.modes_per_axis + 1)
        self.node_factors = []
        self.center_factors = []
        for (lo, hi), ax, cax in zip(grid.box, grid.axes(), grid.cell_axes()):
            hat_n = (ax - lo) / (hi - lo)
            hat_c = (cax - lo) / (hi - lo)
            self.node_factors.append(np.sin(np.pi * np.outer(ks, hat_n)))
            self.center_factors.append(np.sin(np.pi * np.outer(ks, hat_c)))

    @property
    def count(self) -> int:
        return self.modes_per_axis ** self.grid.ndim

    def mode_indices(self):
        return itertools.product(range(self.modes_per_axis), repeat=self.grid.ndim)

    def nodal_mode(self, multi) -> DiscreteFunction:
        """Nodal values of one mode (multi is 0-based per axis)."""
        vals = self.node_factors[0][multi[0]]
        for d in range(1, self.grid.ndim):
            vals = np.multiply.outer(vals, self.node_factors[d][multi[d]])
        return DiscreteFunction(self.grid, vals, zero_boundary=True)

    def flux_tests(self, flux: FluxField) -> np.ndarray:
        """Pairings of each flux component with each mode at cell centers.

        Returns an array of shape (modes,)*ndim + (m,):
        T[k, ..., j] = sum_cells flux_j psi_k(center) * cellvol.
        """
        nd = self.grid.ndim
        cells = self._CELL_AXES[:nd]
        modes = self._MODE_AXES[:nd]
        spec = (
            cells + "z," + ",".join(m + c for m, c in zip(modes, cells)) + "->" + modes + "z"
        )
        return np.einsum(spec, flux.values, *self.center_factors) * self.grid.cell_volume

    def density_tests(self, values: np.ndarray) -> np.ndarray:
        """Pairings <density, psi_k> by nodal quadrature, shape (modes,)*ndim.

        Modes vanish at the boundary, so boundary density values are inert.
        """
        nd = self.grid.ndim
        cells = self._CELL_AXES[:nd]
        modes = self._MODE_AXES[:nd]
        spec = cells + "," + ",".join(m + c for m, c in zip(modes, cells)) + "->" + modes
        return np.einsum(spec, values, *self.node_factors) * self.grid.node_volume


class DualNormEstimator:
    """V' norm of densities: exact Riesz at p = 2, dictionary bound for p > 2.

    For p > 2 the estimate is sup_j <g, psi_j> / |X psi_j|_p over the sine
    dictionary; it is a lower bound of the true dual norm and is labelled an
    estimate wherever reported.
    """

    def __init__(
        self,
        family: VectorFieldFamily,
        grid: Grid,
        p: float,
        xlap: XLaplacian = None,
        modes_per_axis: int = 64,
    ):
        self.family = family
        self.grid = grid
        self.p = float(p)
        self.xlap = xlap if xlap is not None else XLaplacian(family, grid)
        self.exact = self.p == 2.0
        if not self.exact:
            self.dictionary = SineDictionary(grid, modes_per_axis)
            norms = []
            for multi in self.dictionary.mode_indices():
                psi = self.dictionary.nodal_mode(multi)
                xpsi = FluxField(grid, self.xlap.x_gradient_values(psi.values))
                norms.append(lp_norm(xpsi, self.p))
            self._mode_vnorms = np.array(norms).reshape(
                (self.dictionary.modes_per_axis,) * grid.ndim
            )

    def of_assembled(self, assembled_interior: np.ndarray) -> float:
        if self.exact:
            return self.xlap.dual_norm_p2(assembled_interior)
        dens = np.zeros(self.grid.n_nodes)
        dens[self.xlap.interior_idx] = assembled_interior / self.grid.node_volume
        coefs = self.dictionary.density_tests(dens.reshape(self.grid.shape))
        return float(np.max(np.abs(coefs) / self._mode_vnorms))

    def of_density(self, density: DiscreteFunction) -> float:
        if density.grid != self.grid:
            raise ContractViolation("density lives on a different grid")
        assembled = density.values.ravel()[self.xlap.interior_idx] * self.grid.node_volume
        return self.of_assembled(assembled)


def dual_norm_estimate(
    g: DiscreteFunction,
    family: VectorFieldFamily,
    grid: Grid,
    p: float,
    modes_per_axis: int = 64,
) -> float:
    """V' norm of the density g: exact Riesz value at p = 2, else a
    dictionary lower-bound estimate."""
    if not np.all(np.isfinite(g.values)):
        raise ContractViolation("density has non-finite entries")
    return DualNormEstimator(family, grid, p, modes_per_axis=modes_per_axis).of_density(g)


def poincare_ratio(
    family: VectorFieldFamily,
    grid: Grid,
    p: float,
    n_trials: int,
    seed: int = DEFAULT_SEED,
    modes_per_axis: int = 8,
) -> float:
    """Empirical lower bound of 1/c_{p,Omega}: max |u|_p^p / |Xu|_p^p.

    Trials are random low-mode sine combinations with spectrally decaying
    coefficients (seeded). Trials with Xu identically zero but u nonzero are
    possible for grossly under-resolved degenerate fields; they are logged
    as degeneracy warnings and excluded from the maximum.
    """
    if n_trials < 1:
        raise ContractViolation("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    dictionary = SineDictionary(grid, modes_per_axis)
    k = dictionary.modes_per_axis
    xlap = XLaplacian(family, grid)
    # spectral decay 1/(1+|k|^2) keeps trials smooth
    multi = np.indices((k,) * grid.ndim) + 1
    decay = 1.0 / (1.0 + np.sum(multi.astype(float) ** 2, axis=0))
    best = 0.0
    nd = grid.ndim
    cells = SineDictionary._CELL_AXES[:nd]
    modes = SineDictionary._MODE_AXES[:nd]
    spec = modes + "," + ",".join(m + c for m, c in zip(modes, cells)) + "->" + cells
    for _ in range(n_trials):
        coef = rng.standard_normal((k,) * nd) * decay
        vals = np.einsum(spec, coef, *dictionary.node_factors)
        u = DiscreteFunction(grid, vals, zero_boundary=True)
        xu = FluxField(grid, xlap.x_gradient_values(u.values))
        num = lp_norm(u, p) ** p
        den = lp_norm(xu, p) ** p
        if den == 0.0:
            if num > 0.0:
                logger.warning(
                    "poincare_ratio: trial with Xu == 0 but u != 0 on family %s "
                    "(degenerate under-resolution)",
                    family.name,
                )
            continue
        best = max(best, num / den)
    return float(best)
