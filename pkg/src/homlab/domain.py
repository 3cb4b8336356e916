"""Boundary-value solves on the unit square.

This module owns everything that lives on the physical domain (0,1)^2 with
homogeneous Dirichlet conditions: the oscillatory operator at a given scale
``epsilon``, its constant-coefficient effective counterpart, and the
boundary-adapted correctors that repair the mismatch between periodic cell
data and the Dirichlet wall.

Scale separation is written as ``x / epsilon``: coefficient fields from
:mod:`homlab.coefficients` are unit-periodic, so the oscillatory operator
samples them at ``y = x / epsilon``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .coefficients import CoefficientModel
from .errors import CoercivityError, ConfigurationError, SolverError
from .fem import (
    QUAD_XI,
    QUAD_W,
    SparseOperator,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_mass,
    cell_gradients,
    cell_values,
    cg_solve,
    interior_operator,
    recover_gradient,
)
from .grids import DirichletGrid, GridFunction

__all__ = [
    "EpsProblem",
    "DirichletCorrectors",
    "CoercivityReport",
    "solve_eps",
    "solve_homogenized",
    "solve_dirichlet_correctors",
    "coercivity_check",
    "homogenized_lower_bound",
    "galerkin_energy_defect",
]

#: Mesh-resolution rule: the domain grid must put at least this many cells
#: across one period of the oscillation, i.e. h <= epsilon / RESOLUTION_FACTOR.
RESOLUTION_FACTOR = 16


def _scaled_a(model: CoefficientModel, epsilon: float):
    def a_eval(x1, x2):
        return model.a_eval(x1 / epsilon, x2 / epsilon)

    return a_eval


def _scaled_w(model: CoefficientModel, epsilon: float):
    def w_eval(x1, x2):
        return model.w_eval(x1 / epsilon, x2 / epsilon)

    return w_eval


class EpsProblem:
    """Oscillatory Dirichlet problem at a fixed scale.

    Bundles the coefficient model, the scale ``epsilon`` and the domain grid,
    and caches the assembled interior operators.  Construction enforces the
    resolution rule ``h <= epsilon / 16``; everything downstream may then
    assume the oscillation is resolved.
    """

    def __init__(self, model: CoefficientModel, epsilon: float, grid: DirichletGrid):
        if epsilon <= 0.0:
            raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
        if grid.periodic:
            raise ConfigurationError("EpsProblem needs a Dirichlet grid")
        if grid.h > epsilon / RESOLUTION_FACTOR + 1e-14:
            raise ConfigurationError(
                f"grid too coarse for epsilon={epsilon}: h={grid.h:.6g} exceeds "
                f"epsilon/{RESOLUTION_FACTOR}={epsilon / RESOLUTION_FACTOR:.6g}; "
                f"use n >= {int(np.ceil(RESOLUTION_FACTOR / epsilon))}")
        self.model = model
        self.epsilon = float(epsilon)
        self.grid = grid
        self._stiffness_full: Optional[SparseOperator] = None
        self._wmass_full: Optional[SparseOperator] = None
        self._mass_int: Optional[SparseOperator] = None
        self._op_int: Optional[SparseOperator] = None
        self._diff_int: Optional[SparseOperator] = None

    # --- assembly (lazy, cached) -------------------------------------

    def stiffness_full(self) -> SparseOperator:
        if self._stiffness_full is None:
            self._stiffness_full = assemble_stiffness(
                self.grid, _scaled_a(self.model, self.epsilon))
        return self._stiffness_full

    def weighted_mass_full(self) -> SparseOperator:
        if self._wmass_full is None:
            self._wmass_full = assemble_weighted_mass(
                self.grid, _scaled_w(self.model, self.epsilon))
        return self._wmass_full

    def mass_interior(self) -> SparseOperator:
        if self._mass_int is None:
            self._mass_int = interior_operator(self.grid, assemble_mass(self.grid))
        return self._mass_int

    def operator_interior(self) -> SparseOperator:
        """Interior matrix of  -div(A(x/eps) grad .) + (1/eps) W(x/eps)."""
        if self._op_int is None:
            k = self.diffusion_interior()
            if self.model.w_preset == "zero":
                self._op_int = k
            else:
                mw = interior_operator(self.grid, self.weighted_mass_full())
                combined = k.mat + (1.0 / self.epsilon) * mw.mat
                self._op_int = SparseOperator(combined.tocsr())
        return self._op_int

    def diffusion_interior(self) -> SparseOperator:
        """Interior stiffness alone (no potential term)."""
        if self._diff_int is None:
            self._diff_int = interior_operator(self.grid, self.stiffness_full())
        return self._diff_int


@dataclass
class CoercivityReport:
    """Outcome of the pre-solve sign check on the oscillatory form.

    ``lambda_eps_1`` is the first Dirichlet eigenvalue of the full operator
    (diffusion plus scaled potential); the form is coercive iff it is
    positive.  ``lambda0_prime_1`` is the first eigenvalue of the
    constant-coefficient diffusion part of the effective operator, kept for
    context alongside the effective potential constant.
    """

    epsilon: float
    lambda_eps_1: float
    lambda0_prime_1: float
    m_w_chi_w: float
    coercive: bool


def coercivity_check(problem: EpsProblem,
                     eigs_fn: Callable[..., Sequence[float]],
                     a_hat: np.ndarray,
                     m_w_chi_w: float,
                     seed: int = 0) -> CoercivityReport:
    """Probe the lowest eigenvalue of the oscillatory form.

    ``eigs_fn(op, mass, k, seed=...)`` must return at least one generalized
    eigenvalue, smallest first (the engine in :mod:`homlab.spectral` fits).
    No exception is raised on a negative finding — the report carries it, and
    :func:`solve_eps` decides what to do.
    """
    lam_eps = float(eigs_fn(problem.operator_interior(),
                            problem.mass_interior(), 1, seed=seed)[0])
    k_hom = interior_operator(
        problem.grid, assemble_stiffness(problem.grid, _constant_matrix(a_hat)))
    lam_hom = float(eigs_fn(k_hom, problem.mass_interior(), 1, seed=seed)[0])
    return CoercivityReport(
        epsilon=problem.epsilon,
        lambda_eps_1=lam_eps,
        lambda0_prime_1=lam_hom,
        m_w_chi_w=float(m_w_chi_w),
        coercive=lam_eps > 0.0,
    )


def _constant_matrix(a_hat: np.ndarray):
    a_hat = np.asarray(a_hat, dtype=float)

    def a_eval(x1, x2):
        out = np.empty(np.shape(x1) + (2, 2))
        out[...] = a_hat
        return out

    return a_eval


def solve_eps(problem: EpsProblem,
              coercivity: Optional[CoercivityReport] = None,
              allow_noncoercive: bool = False,
              tol: float = 1e-10,
              max_iter: Optional[int] = None) -> GridFunction:
    """Solve the oscillatory Dirichlet problem; returns the full nodal field.

    Callers are expected to establish coercivity first — pass the report from
    :func:`coercivity_check`, or set ``allow_noncoercive=True`` to take
    responsibility themselves.  A report with ``coercive=False`` stops the
    solve unless overridden; if CG later detects an indefinite operator
    anyway, that surfaces as :class:`CoercivityError`.
    """
    if coercivity is not None and not coercivity.coercive and not allow_noncoercive:
        raise CoercivityError(
            f"first eigenvalue {coercivity.lambda_eps_1:.6g} <= 0 at "
            f"epsilon={problem.epsilon}: the bilinear form is not coercive "
            "(pass allow_noncoercive=True to attempt the solve regardless)",
            lambda_1=coercivity.lambda_eps_1)
    if coercivity is None and not allow_noncoercive:
        raise ConfigurationError(
            "solve_eps needs a coercivity report (or allow_noncoercive=True)")
    rhs_full = assemble_load(problem.grid, problem.model.f_eval)
    rhs = problem.grid.restrict(rhs_full)
    try:
        inner = cg_solve(problem.operator_interior(), rhs,
                         tol=tol, max_iter=max_iter)
    except SolverError as err:
        if err.breakdown:
            raise CoercivityError(
                f"CG found negative curvature at epsilon={problem.epsilon}; "
                "the oscillatory form is indefinite on this grid") from err
        raise
    return GridFunction(problem.grid, problem.grid.extend(inner))


def homogenized_lower_bound(a_hat: np.ndarray) -> float:
    """Rigorous lower bound on the first Dirichlet eigenvalue of
    ``-div(a_hat grad .)`` on the unit square: ``2 pi^2 lambda_min(a_hat)``.

    For constant SPD ``a_hat`` the Rayleigh quotient is bounded below by
    ``lambda_min(a_hat) |grad v|^2 / |v|^2 >= lambda_min(a_hat) * 2 pi^2``.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    sym = 0.5 * (a_hat + a_hat.T)
    lam_min = float(np.linalg.eigvalsh(sym)[0])
    return 2.0 * np.pi ** 2 * lam_min


def solve_homogenized(a_hat: np.ndarray,
                      m_w_chi_w: float,
                      grid: DirichletGrid,
                      f_eval: Callable[..., np.ndarray],
                      tol: float = 1e-10,
                      max_iter: Optional[int] = None) -> GridFunction:
    """Solve the effective problem  -div(a_hat grad u) + m u = f,  u = 0 on
    the boundary, with constant ``a_hat`` and constant zeroth-order ``m``.

    The sign hypothesis is enforced up front: ``m`` must exceed the negative
    of the first diffusion eigenvalue, for which the rigorous bound
    ``2 pi^2 lambda_min(a_hat)`` stands in.  Violations raise
    :class:`ConfigurationError` before any assembly.
    """
    m = float(m_w_chi_w)
    bound = homogenized_lower_bound(a_hat)
    if m <= -bound:
        raise ConfigurationError(
            f"effective potential m={m:.6g} does not satisfy the sign "
            f"hypothesis m > -lambda_1 (rigorous bound -{bound:.6g}); "
            "the effective operator may be singular or indefinite")
    if grid.periodic:
        raise ConfigurationError("solve_homogenized needs a Dirichlet grid")
    k_full = assemble_stiffness(grid, _constant_matrix(a_hat))
    op = interior_operator(grid, k_full)
    if m != 0.0:
        mass_int = interior_operator(grid, assemble_mass(grid))
        op = SparseOperator((op.mat + m * mass_int.mat).tocsr())
    rhs = grid.restrict(assemble_load(grid, f_eval))
    try:
        inner = cg_solve(op, rhs, tol=tol, max_iter=max_iter)
    except SolverError as err:
        if err.breakdown:
            raise CoercivityError(
                "effective operator indefinite despite the sign hypothesis; "
                "check a_hat and m for consistency") from err
        raise
    return GridFunction(grid, grid.extend(inner))


@dataclass
class DirichletCorrectors:
    """Boundary-adapted corrector fields ``Phi_j`` for one ``epsilon``.

    ``phi[j]`` solves the oscillatory diffusion equation with boundary data
    ``x_{j+1}`` (stored as a full nodal field so the trace is exact by
    construction), and ``deviation[j] = phi[j] - x_{j+1}`` is the part that
    vanishes on the wall.  No potential term enters: the corrector repairs
    the gradient line of the expansion only.
    """

    epsilon: float
    phi: List[GridFunction]
    deviation: List[GridFunction]

    def sup_deviation(self) -> float:
        return max(float(np.max(np.abs(d.values))) for d in self.deviation)

    def min_jacobian(self, layer_width_factor: float = 1.0) -> float:
        """Smallest determinant of the corrector Jacobian near the wall.

        The map ``x -> (phi_1, phi_2)`` is probed on every cell whose center
        lies within ``layer_width_factor * epsilon`` of the boundary; its
        Jacobian is evaluated from recovered nodal gradients interpolated to
        the quadrature points of each such cell.
        """
        grid = self.phi[0].grid
        n = grid.n
        h = grid.h
        width = layer_width_factor * self.epsilon
        centers = (np.arange(n) + 0.5) * h
        near = (centers < width) | (centers > 1.0 - width)
        mask2d = near[:, None] | near[None, :]  # index [iy, ix]
        cells = np.flatnonzero(mask2d.ravel())
        if cells.size == 0:
            cells = np.arange(grid.ncells)  # layer thinner than one cell row
        jac = np.empty((cells.size, QUAD_W.size, 2, 2))
        for j in 0, 1:
            gx, gy = recover_gradient(self.phi[j])
            jac[:, :, 0, j] = cell_values(grid, gx.values)[cells]
            jac[:, :, 1, j] = cell_values(grid, gy.values)[cells]
        dets = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        return float(dets.min())


def solve_dirichlet_correctors(problem: EpsProblem,
                               tol: float = 1e-10,
                               max_iter: Optional[int] = None) -> DirichletCorrectors:
    """Solve the two corrector problems for ``problem``'s scale and grid.

    The ansatz ``Phi_j = x_j + phi`` turns the boundary data into homogeneous
    Dirichlet data for ``phi`` with load ``-(K x_j)`` restricted to the
    interior; the boundary nodes of the returned field therefore carry
    ``x_j`` exactly (bit for bit), not merely up to solver tolerance.
    """
    grid = problem.grid
    k_full = problem.stiffness_full()
    coords = grid.node_coords()
    phi = []
    deviation = []
    for j in 0, 1:
        x_j = coords[:, j].copy()
        rhs = -grid.restrict(k_full.dot(x_j))
        if np.linalg.norm(rhs) == 0.0:
            inner = np.zeros(grid.ndof_interior)
        else:
            inner = cg_solve(problem.diffusion_interior(), rhs,
                             tol=tol, max_iter=max_iter)
        dev = grid.extend(inner)
        phi.append(GridFunction(grid, x_j + dev))
        deviation.append(GridFunction(grid, dev))
    return DirichletCorrectors(epsilon=problem.epsilon, phi=phi,
                               deviation=deviation)


def galerkin_energy_defect(problem: EpsProblem, u: GridFunction) -> float:
    """Relative gap between the operator energy ``u^T L u`` and the same
    energy recomputed by direct quadrature of the integrand.

    Both routes use the assembly quadrature rule, so for an exactly
    assembled matrix the gap is rounding noise; it is the cheap end-to-end
    consistency probe for the oscillatory solve path.
    """
    grid = problem.grid
    inner = grid.restrict(u.values)
    op_energy = float(inner @ problem.operator_interior().dot(inner))

    grads = cell_gradients(grid, u.values)  # (ncells, nq, 2)
    vals = cell_values(grid, u.values)  # (ncells, nq)
    pts = grid.quad_points(QUAD_XI)
    a = problem.model.a_eval(pts[..., 0] / problem.epsilon,
                             pts[..., 1] / problem.epsilon)
    quad = grid.h ** 2 * np.einsum("q,cqi,cqij,cqj->", QUAD_W, grads, a, grads)
    if problem.model.w_preset != "zero":
        w = problem.model.w_eval(pts[..., 0] / problem.epsilon,
                                 pts[..., 1] / problem.epsilon)
        quad += (grid.h ** 2 / problem.epsilon) * np.einsum(
            "q,cq,cq->", QUAD_W, w, vals ** 2)
    quad = float(quad)
    scale = max(abs(quad), abs(op_energy), 1e-300)
    return abs(op_energy - quad) / scale
