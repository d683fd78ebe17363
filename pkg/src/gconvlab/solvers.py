"""Monotone solvers for the X-divergence elliptic and parabolic problems.

Elliptic: find zero-boundary u with  sum_cells (a(x_c, Xu_c), Xv_c) vol =
<g, v> for all zero-boundary v. The iteration is damped preconditioned
residual descent u <- u - tau R^(-1)(Au - g) with R the fixed p = 2
X-stiffness assembled once per grid; backtracking halves tau until the
certified residual decreases. Acceptance is the certified dual residual,
not iteration theory. Parabolic: implicit Euler, each step solved by the
same engine applied to the strongly monotone map v -> v/tau + A(t)v.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .duality import DualNormEstimator, XLaplacian, PRECOND_REG_SCALE
from .errors import (
    ConfigurationError,
    ContractViolation,
    EvaluationError,
    NonConvergence,
)
from .fields import VectorFieldFamily
from .grids import DiscreteFunction, FluxField, Grid, lp_norm
from .operators import MonotoneMap, verify_structure

DEFAULT_TOL_P2 = 1e-8
DEFAULT_TOL_PGT2 = 1e-6  # dictionary dual norm is an estimate for p > 2
APRIORI_SLACK = 1.05
MAX_BACKTRACKS = 60
MIN_DAMPING = 1e-14
SUFFICIENT_DECREASE = 1e-4


def default_tol(p: float) -> float:
    return DEFAULT_TOL_P2 if p == 2.0 else DEFAULT_TOL_PGT2


class SolverContext:
    """Precomputations shared by every solve on one (family, grid, p).

    Holds the assembled X-gradient/stiffness, the dual-norm estimator and
    the cell centers. Members of an h-sweep differ only in the map a_h, so
    one context serves the whole sweep.
    """

    def __init__(
        self,
        family: VectorFieldFamily,
        grid: Grid,
        p: float,
        modes_per_axis: int = 64,
        precond_reg: float = PRECOND_REG_SCALE,
    ):
        if grid.ndim != family.n:
            raise ContractViolation(
                f"grid dimension {grid.ndim} != family ambient dimension {family.n}"
            )
        self.family = family
        self.grid = grid
        self.p = float(p)
        self.xlap = XLaplacian(family, grid, reg_scale=precond_reg)
        self.dual = DualNormEstimator(family, grid, p, xlap=self.xlap, modes_per_axis=modes_per_axis)
        self.centers = grid.cell_centers()
        self.interior = self.xlap.interior_idx

    def flux(self, a: MonotoneMap, u_values: np.ndarray, t: float) -> np.ndarray:
        """Momentum a(x_c, t, Xu) on cells; raises on non-finite values."""
        xu = self.xlap.x_gradient_values(u_values)
        fl = a.eval(self.centers, t, xu)
        if not np.all(np.isfinite(fl)):
            bad = ~np.isfinite(fl).all(axis=-1)
            cell = tuple(int(i) for i in np.argwhere(bad)[0])
            raise EvaluationError(
                f"operator produced non-finite flux at cell {cell}",
                witness={"cell": cell, "center": tuple(self.centers[cell])},
            )
        return fl

    def assembled_operator(self, a: MonotoneMap, u_values: np.ndarray, t: float) -> np.ndarray:
        """Weak-form vector of div_X a(., t, Xu), interior nodes only."""
        return self.xlap.assemble_flux(self.flux(a, u_values, t))[self.interior]

    def assembled_density(self, density_values: np.ndarray) -> np.ndarray:
        return density_values.ravel()[self.interior] * self.grid.node_volume


@dataclass(frozen=True)
class EllipticProblem:
    """div_X a(x, Xu) = g with zero boundary values.

    The map is structurally verified before solving unless verify=False;
    the gate samples verify_pairs pairs at verify_tol.
    """

    family: VectorFieldFamily
    a: MonotoneMap
    g: DiscreteFunction
    grid: Grid
    verify: bool = True
    verify_pairs: int = 2000
    verify_tol: float = 1e-8

    def __post_init__(self):
        if self.a.time_dependent:
            raise ConfigurationError("elliptic problems need a time-independent map")
        if self.g.grid != self.grid:
            raise ContractViolation("datum g lives on a different grid")


@dataclass(frozen=True)
class ParabolicProblem:
    """u' + div_X a(x, t, Xu) = f, u(0) = phi, on a uniform time grid.

    f is a list of K + 1 right-hand-side densities sampled at t_k = k T / K
    (the implicit step uses the right endpoint); phi must be zero-boundary.
    """

    family: VectorFieldFamily
    a: MonotoneMap
    f: List[DiscreteFunction]
    phi: DiscreteFunction
    grid: Grid
    T: float
    K: int
    verify: bool = True
    verify_pairs: int = 2000
    verify_tol: float = 1e-8

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError("need at least one time step (K >= 1)")
        if self.T <= 0:
            raise ConfigurationError("final time T must be positive")
        if not self.phi.zero_boundary:
            raise ContractViolation("initial datum phi must have zero boundary values")
        if len(self.f) != self.K + 1:
            raise ContractViolation(
                f"f must hold K+1 = {self.K + 1} time samples, got {len(self.f)}"
            )

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.K + 1)


@dataclass
class SolveReport:
    iterations: int
    residual_dual: float
    apriori_ok: bool
    wall_time: float
    residual_is_estimate: bool = False  # True when p > 2 (dictionary dual norm)


@dataclass
class Trajectory:
    """Time-indexed states approximating a space-time solution; u^0 = phi."""

    grid: Grid
    times: np.ndarray
    states: List[DiscreteFunction]

    def __len__(self):
        return len(self.states)


def apply_operator(
    family: VectorFieldFamily,
    a: MonotoneMap,
    u: DiscreteFunction,
    t: float = 0.0,
    context: SolverContext = None,
) -> DiscreteFunction:
    """Density of div_X a(., t, Xu) in the dual space.

    Sign convention: <Au, v> = sum_cells (a(x_c, t, Xu_c), Xv_c) vol; nodal
    values are the assembled weak form divided by the nodal volume.
    """
    if not u.zero_boundary:
        raise ContractViolation("apply_operator expects a zero-boundary function")
    ctx = context if context is not None else SolverContext(family, u.grid, a.params.p)
    assembled = ctx.xlap.assemble_flux(ctx.flux(a, u.values, t))
    dens = np.zeros(u.grid.n_nodes)
    dens[ctx.interior] = assembled[ctx.interior] / u.grid.node_volume
    return DiscreteFunction(u.grid, dens.reshape(u.grid.shape), zero_boundary=True)


def _verify_gate(a, grid, n_pairs, tol, m_dim):
    report = verify_structure(a, grid.box, n_pairs, tol, m_dim=m_dim)
    if not report.passed:
        failed = [k for k, c in report.conditions.items() if not c.passed]
        raise ConfigurationError(
            f"map {a.name!r} failed structural verification on conditions {failed} "
            f"({n_pairs} pairs, tol {tol:g})"
        )


def _descend(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    dual_fn: Callable[[np.ndarray], float],
    precond_fn: Callable[[np.ndarray], np.ndarray],
    u0_interior: np.ndarray,
    tol: float,
    max_iter: int,
    damping_init: float,
    where: str,
):
    """Damped preconditioned residual descent on interior values.

    Backtracking halves the damping until the certified residual decreases;
    accepted residuals are nonincreasing by construction. Returns
    (u_interior, residual, iterations).
    """
    u = u0_interior.copy()
    r = residual_fn(u)
    rd = dual_fn(r)
    tau = damping_init
    iters = 0
    while rd > tol:
        if iters >= max_iter:
            raise NonConvergence(
                f"{where}: residual {rd:.3e} > tol {tol:.3e} after {iters} iterations",
                iterations=iters,
                best_residual=rd,
            )
        delta = precond_fn(r)
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            u_try = u - tau * delta
            r_try = residual_fn(u_try)
            rd_try = dual_fn(r_try)
            if rd_try <= rd * (1.0 - SUFFICIENT_DECREASE * tau) or rd_try <= tol:
                accepted = True
                break
            tau *= 0.5
            if tau < MIN_DAMPING:
                break
        if not accepted:
            raise NonConvergence(
                f"{where}: line search stalled at residual {rd:.3e} (tol {tol:.3e})",
                iterations=iters,
                best_residual=rd,
            )
        u, r, rd = u_try, r_try, rd_try
        iters += 1
        tau = min(2.0 * tau, damping_init)
    return u, rd, iters


def solve_elliptic(
    problem: EllipticProblem,
    tol: float = None,
    max_iter: int = 500,
    damping_init: float = 1.0,
    context: SolverContext = None,
    initial: DiscreteFunction = None,
):
    """Solve the elliptic problem to a certified dual residual.

    Returns (u, SolveReport). The report's apriori_ok flag checks the energy
    bound |Xu|_p <= slack * alpha^(-1/(p-1)) |g|_{V'}^(1/(p-1)) with slack
    1.05 (exact dual norm at p = 2, estimate-based flag otherwise).
    Raises NonConvergence when the iteration budget is exhausted.
    """
    t0 = time.perf_counter()
    a, grid = problem.a, problem.grid
    p = a.params.p
    if tol is None:
        tol = default_tol(p)
    ctx = context if context is not None else SolverContext(problem.family, grid, p)
    if problem.verify:
        _verify_gate(a, grid, problem.verify_pairs, problem.verify_tol, problem.family.m)

    g_assembled = ctx.assembled_density(problem.g.values)

    def residual(u_int):
        u_full = np.zeros(grid.n_nodes)
        u_full[ctx.interior] = u_int
        return ctx.assembled_operator(a, u_full.reshape(grid.shape), 0.0) - g_assembled

    u0 = np.zeros(len(ctx.interior))
    if initial is not None:
        u0 = initial.values.ravel()[ctx.interior].copy()
    u_int, rd, iters = _descend(
        residual,
        ctx.dual.of_assembled,
        lambda r: ctx.xlap.precond_solve(r),
        u0,
        tol,
        max_iter,
        damping_init,
        where="solve_elliptic",
    )

    vals = np.zeros(grid.n_nodes)
    vals[ctx.interior] = u_int
    u = DiscreteFunction(grid, vals.reshape(grid.shape), zero_boundary=True)

    xu = FluxField(grid, ctx.xlap.x_gradient_values(u.values))
    g_dual = ctx.dual.of_assembled(g_assembled)
    alpha = a.params.alpha
    bound = alpha ** (-1.0 / (p - 1.0)) * g_dual ** (1.0 / (p - 1.0))
    apriori_ok = lp_norm(xu, p) <= APRIORI_SLACK * bound + 1e-14

    report = SolveReport(
        iterations=iters,
        residual_dual=rd,
        apriori_ok=bool(apriori_ok),
        wall_time=time.perf_counter() - t0,
        residual_is_estimate=not ctx.dual.exact,
    )
    return u, report


def solve_parabolic(
    problem: ParabolicProblem,
    tol: float = None,
    max_iter: int = 500,
    damping_init: float = 1.0,
    context: SolverContext = None,
):
    """Implicit Euler in time, certified elliptic solves per step.

    Step k solves (v - u^k)/tau + A(t_{k+1}) v = f^{k+1} by descent on the
    strongly monotone step map, warm-started at u^k, each step certified to
    the step tolerance. Returns (Trajectory, SolveReport); the report's
    apriori_ok asserts the discrete energy boundedness
    max_k |u^k|_{L2} <= slack (|phi|_{L2} + sqrt(sum_k tau |f^k|_{V'}^2 / (2 alpha))).
    Step-level non-convergence aborts with the failing step index.
    """
    t0 = time.perf_counter()
    a, grid = problem.a, problem.grid
    p = a.params.p
    if tol is None:
        tol = default_tol(p)
    ctx = context if context is not None else SolverContext(problem.family, grid, p)
    if problem.verify:
        _verify_gate(a, grid, problem.verify_pairs, problem.verify_tol, problem.family.m)

    tau = problem.T / problem.K
    times = problem.times
    vol = grid.node_volume
    mass_shift = vol / tau

    u_int = problem.phi.values.ravel()[ctx.interior].copy()
    states = [problem.phi.copy()]
    total_iters = 0
    worst_rd = 0.0

    for k in range(problem.K):
        t_next = float(times[k + 1])
        f_assembled = ctx.assembled_density(problem.f[k + 1].values)
        u_prev = u_int.copy()

        def residual(v_int, _u_prev=u_prev, _t=t_next, _f=f_assembled):
            v_full = np.zeros(grid.n_nodes)
            v_full[ctx.interior] = v_int
            mass = (v_int - _u_prev) * (vol / tau)
            return mass + ctx.assembled_operator(a, v_full.reshape(grid.shape), _t) - _f

        try:
            u_int, rd, iters = _descend(
                residual,
                ctx.dual.of_assembled,
                lambda r: ctx.xlap.precond_solve(r, shift=mass_shift),
                u_prev,
                tol,
                max_iter,
                damping_init,
                where=f"solve_parabolic step {k + 1}/{problem.K}",
            )
        except NonConvergence as exc:
            exc.step = k + 1
            raise
        total_iters += iters
        worst_rd = max(worst_rd, rd)
        vals = np.zeros(grid.n_nodes)
        vals[ctx.interior] = u_int
        states.append(DiscreteFunction(grid, vals.reshape(grid.shape), zero_boundary=True))

    # energy boundedness (discrete estimate, asserted as boundedness only)
    alpha = a.params.alpha
    data_sq = sum(
        tau * ctx.dual.of_assembled(ctx.assembled_density(problem.f[k].values)) ** 2
        for k in range(1, problem.K + 1)
    )
    energy_bound = lp_norm(problem.phi, 2) + np.sqrt(data_sq / (2.0 * alpha))
    max_norm = max(lp_norm(s, 2) for s in states)
    apriori_ok = max_norm <= APRIORI_SLACK * energy_bound + 1e-14

    report = SolveReport(
        iterations=total_iters,
        residual_dual=worst_rd,
        apriori_ok=bool(apriori_ok),
        wall_time=time.perf_counter() - t0,
        residual_is_estimate=not ctx.dual.exact,
    )
    return Trajectory(grid, times, states), report


def sample_time_series(fn, grid: Grid, T: float, K: int) -> List[DiscreteFunction]:
    """Sample fn(points, t) -> values at the K+1 step endpoints."""
    pts = grid.nodes()
    return [
        DiscreteFunction(grid, np.asarray(fn(pts, t), dtype=float)) for t in np.linspace(0.0, T, K + 1)
    ]


def constant_time_series(g: DiscreteFunction, K: int) -> List[DiscreteFunction]:
    """Time-independent data: the same density at every step endpoint."""
    return [g] * (K + 1)
