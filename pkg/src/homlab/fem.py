"""Bilinear FEM on structured grids: assembly, solvers, norms, flux.

Assembly uses a fixed 2x2 Gauss rule per cell with coefficients sampled
pointwise at the quadrature points.  On the reference square the physical
element integrals reduce to

    stiffness:  sum_q w_q  G_a . A(x_q) . G_b          (h-independent in 2D)
    mass:       h^2 sum_q w_q  N_a N_b
    load:       h^2 sum_q w_q  f(x_q) N_a

with N, G the shape values/reference gradients and physical gradients G/h.
"""

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, SolverError, UsageError
from .grids import DirichletGrid, GridFunction, PeriodicGrid, gauss_rule, shape_gradients, shape_values

QUAD_XI, QUAD_W = gauss_rule(2)
_N = shape_values(QUAD_XI)          # (4, 4)
_G = shape_gradients(QUAD_XI)       # (4, 4, 2)


class SparseOperator:
    """Symmetric sparse matrix in CSR form with a few convenience hooks."""

    def __init__(self, mat):
        self.mat = mat.tocsr()

    @property
    def shape(self):
        return self.mat.shape

    def dot(self, x):
        return self.mat.dot(x)

    def __matmul__(self, x):
        return self.mat.dot(x)

    def toarray(self):
        return self.mat.toarray()

    def symmetry_defect(self):
        d = self.mat - self.mat.T
        if d.nnz == 0:
            return 0.0
        return float(np.abs(d.data).max())

    def restrict(self, idx):
        """Principal submatrix on the index set idx."""
        return SparseOperator(self.mat[np.ix_(idx, idx)])


def _check_finite(vals, what):
    if np.isfinite(vals).all():
        return
    bad = np.argwhere(~np.isfinite(np.asarray(vals)))
    cell = int(bad[0][0])
    raise AssemblyError(f"non-finite {what} sample in cell {cell}")


def _scatter(grid, element_mats):
    """Accumulate (ncells,4,4) element matrices into a global CSR matrix."""
    conn = grid.conn
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    mat = sp.coo_matrix((element_mats.ravel(), (rows, cols)),
                        shape=(grid.nnodes, grid.nnodes))
    return SparseOperator(mat.tocsr())


def assemble_stiffness(grid, a_eval):
    """Stiffness matrix for -div(A grad .) with A sampled at quadrature points."""
    pts = grid.quad_points(QUAD_XI)
    a = a_eval(pts[..., 0], pts[..., 1])            # (ncells, nq, 2, 2)
    _check_finite(a, "diffusion")
    elem = np.einsum("q,qai,cqij,qbj->cab", QUAD_W, _G, a, _G, optimize=True)
    return _scatter(grid, elem)


def assemble_mass(grid):
    """Consistent mass matrix."""
    elem = grid.h ** 2 * np.einsum("q,qa,qb->ab", QUAD_W, _N, _N)
    return _scatter(grid, np.broadcast_to(elem, (grid.ncells, 4, 4)))


def assemble_weighted_mass(grid, w_eval):
    """Mass matrix weighted by a scalar field sampled at quadrature points."""
    pts = grid.quad_points(QUAD_XI)
    w = w_eval(pts[..., 0], pts[..., 1])            # (ncells, nq)
    _check_finite(w, "weight")
    elem = grid.h ** 2 * np.einsum("q,cq,qa,qb->cab", QUAD_W, w, _N, _N, optimize=True)
    return _scatter(grid, elem)


def _scatter_vector(grid, element_vecs):
    out = np.zeros(grid.nnodes)
    np.add.at(out, grid.conn.ravel(), element_vecs.ravel())
    return out


def assemble_load(grid, f_eval):
    """Load vector (f, N_a) with f sampled at quadrature points."""
    pts = grid.quad_points(QUAD_XI)
    f = f_eval(pts[..., 0], pts[..., 1])
    _check_finite(f, "load")
    elem = grid.h ** 2 * np.einsum("q,cq,qa->ca", QUAD_W, f, _N, optimize=True)
    return _scatter_vector(grid, elem)


def load_from_quad_values(grid, qvals):
    """Load vector (g, N_a) from values g already tabulated at quadrature points."""
    elem = grid.h ** 2 * np.einsum("q,cq,qa->ca", QUAD_W, qvals, _N, optimize=True)
    return _scatter_vector(grid, elem)


def flux_load_from_quad_values(grid, qvecs):
    """Load vector (g, grad N_a) from a vector field tabulated at quadrature points."""
    elem = grid.h * np.einsum("q,cqi,qai->ca", QUAD_W, qvecs, _G, optimize=True)
    return _scatter_vector(grid, elem)


def cell_values(grid, nodal, xi=None):
    """Evaluate a nodal field at reference points xi in every cell: (ncells, nq)."""
    n = _N if xi is None else shape_values(xi)
    return nodal[grid.conn] @ n.T


def cell_gradients(grid, nodal, xi=None):
    """Physical gradients of a nodal field at reference points: (ncells, nq, 2)."""
    g = _G if xi is None else shape_gradients(xi)
    return np.einsum("ca,qai->cqi", nodal[grid.conn], g) / grid.h


def cg_solve(op, rhs, deflate_constants=False, tol=1e-10, max_iter=None):
    """Conjugate gradients for SPD systems.

    With ``deflate_constants`` the right-hand side and all iterates are kept
    orthogonal to the constant vector, which turns the singular periodic
    operators into well-posed zero-mean problems.  Convergence is relative:
    ||r|| <= tol * ||b||.  Raises SolverError on stagnation or breakdown.
    """
    mat = op.mat if isinstance(op, SparseOperator) else op
    b = np.array(rhs, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = max(1000, 50 * int(np.sqrt(n) + 1))

    def project(v):
        v -= v.mean()
        return v

    if deflate_constants:
        b = project(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)

    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    for it in range(1, max_iter + 1):
        ap = mat.dot(p)
        if deflate_constants:
            ap = project(ap)
        pap = p @ ap
        if pap <= 0.0:
            raise SolverError(
                f"CG breakdown at iteration {it}: curvature {pap:.3e} "
                "(operator not positive definite on the search space)",
                residual=float(np.sqrt(rr) / bnorm), iterations=it,
                breakdown=True)
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        if deflate_constants:
            r = project(r)
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol * bnorm:
            if deflate_constants:
                x = project(x)
            return x
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise SolverError(
        f"CG did not converge in {max_iter} iterations: "
        f"relative residual {np.sqrt(rr) / bnorm:.3e} > {tol:.1e}",
        residual=float(np.sqrt(rr) / bnorm), iterations=max_iter)


def h1_seminorm(gf):
    """Broken H1 seminorm via the assembly quadrature (exact for Q1 fields)."""
    grads = cell_gradients(gf.grid, gf.values)
    val = gf.grid.h ** 2 * np.einsum("q,cqi,cqi->", QUAD_W, grads, grads)
    return float(np.sqrt(val))


def l2_norm(gf):
    """L2 norm via the assembly quadrature (exact for Q1 fields)."""
    vals = cell_values(gf.grid, gf.values)
    val = gf.grid.h ** 2 * np.einsum("q,cq,cq->", QUAD_W, vals, vals)
    return float(np.sqrt(val))


def recover_gradient(gf):
    """Nodal gradient by averaging the Q1 corner gradients of adjacent cells.

    On a uniform grid this reduces to central differences at interior nodes
    (O(h^2)) and one-sided differences on the boundary of a DirichletGrid;
    exact for globally (bi)linear fields.
    """
    grid, u = gf.grid, gf.values
    if grid.periodic:
        n = grid.n
        v = u.reshape(n, n)  # v[iy, ix]
        gx = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2 * grid.h)
        gy = (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2 * grid.h)
        return (GridFunction(grid, gx.ravel()), GridFunction(grid, gy.ravel()))
    m = grid.n + 1
    v = u.reshape(m, m)
    gx = np.gradient(v, grid.h, axis=1, edge_order=1)
    gy = np.gradient(v, grid.h, axis=0, edge_order=1)
    return (GridFunction(grid, gx.ravel()), GridFunction(grid, gy.ravel()))


# Reference points of the two Gauss nodes on each local edge (0..3 = bottom,
# right, top, left), plus the tangential shape machinery they need.
_EDGE_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def _edge_ref_points(local):
    t = _EDGE_T
    if local == 0:
        return np.column_stack([t, np.zeros(2)])
    if local == 1:
        return np.column_stack([np.ones(2), t])
    if local == 2:
        return np.column_stack([t, np.ones(2)])
    return np.column_stack([np.zeros(2), t])


def boundary_flux(gf):
    """Squared-gradient boundary integral with one-sided element gradients.

    Integrates |grad u|^2 over the boundary of a DirichletGrid with a 2-point
    Gauss rule per edge, the gradient taken from the single adjacent cell.
    """
    grid = gf.grid
    if grid.periodic:
        raise UsageError("boundary_flux needs a DirichletGrid; the unit cell has no boundary")
    total = 0.0
    u = gf.values
    for local in range(4):
        mask = grid.edge_local == local
        cells = grid.edge_cell[mask]
        xi = _edge_ref_points(local)
        g = shape_gradients(xi)                       # (2,4,2)
        vals = u[grid.conn[cells]]                    # (ne,4)
        grads = np.einsum("ea,qai->eqi", vals, g) / grid.h
        total += 0.5 * grid.h * np.einsum("eqi,eqi->", grads, grads)
    return float(total)


def interior_operator(grid, op):
    """Restrict an operator on the full nodal set to the interior DOF."""
    if not isinstance(grid, DirichletGrid):
        raise UsageError("interior restriction only applies to DirichletGrid")
    return op.restrict(grid.interior)
