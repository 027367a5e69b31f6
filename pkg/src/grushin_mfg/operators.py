"""Discrete realizations of grad_X, Delta_X and the conservative transport
operator on the truncated grid.

All operators close the boundary with homogeneous Neumann (mirror) ghosts
for diffusion and zero normal flux for transport, so constants lie in the
kernel of the diffusion stencil and the cell sum of any flux divergence
telescopes to zero exactly.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import SolverDiverged
from .grid import Grid
from .vector_fields import VectorFieldFamily

__all__ = ["grad_x", "laplace_x", "fpe_flux_divergence", "diffusion_matrix",
           "advection_matrix", "implicit_diffusion_solve", "PrefactoredDiffusion",
           "integrate", "inner"]


def integrate(grid: Grid, field) -> float:
    return float(np.sum(field) * grid.cell_area)


def inner(grid: Grid, u, v) -> float:
    return float(np.dot(np.ravel(u), np.ravel(v)) * grid.cell_area)


def grad_x(grid: Grid, vf: VectorFieldFamily, values):
    """(d/dx1 u, h(x1) d/dx2 u), centered in the interior, one-sided at the
    truncation boundary."""
    u = np.asarray(values, dtype=float)
    g1 = np.empty_like(u)
    g1[1:-1] = (u[2:] - u[:-2]) / (2.0 * grid.dx1)
    g1[0] = (u[1] - u[0]) / grid.dx1
    g1[-1] = (u[-1] - u[-2]) / grid.dx1
    g2 = np.empty_like(u)
    g2[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2.0 * grid.dx2)
    g2[:, 0] = (u[:, 1] - u[:, 0]) / grid.dx2
    g2[:, -1] = (u[:, -1] - u[:, -2]) / grid.dx2
    g2 *= vf(grid.x1)[:, None]
    return g1, g2


def _second_diff_neumann(u, axis, dx):
    # mirror ghost closure: boundary row is (u_next - u_0)/dx^2
    d = np.diff(u, axis=axis) / dx
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 1)
    flux = np.pad(d, pad)  # zero flux at both walls
    return np.diff(flux, axis=axis) / dx


def laplace_x(grid: Grid, vf: VectorFieldFamily, values, eps: float = 0.0):
    """Delta_X u + eps * (full Laplacian), with h sampled at cell centers.

    Delta_X = d^2/dx1^2 + h(x1)^2 d^2/dx2^2; the cross term of X2^2 is
    absent because h does not depend on x2. Exact on quadratics in the
    interior.
    """
    u = np.asarray(values, dtype=float)
    h_sq = vf(grid.x1)[:, None] ** 2
    d11 = _second_diff_neumann(u, 0, grid.dx1)
    d22 = _second_diff_neumann(u, 1, grid.dx2)
    return (1.0 + eps) * d11 + (h_sq + eps) * d22


def _neumann_1d(n, dx):
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sparse.diags([off, main, off], [-1, 0, 1], format="csr") / dx ** 2


def diffusion_matrix(grid: Grid, vf: VectorFieldFamily, eps: float = 0.0):
    """Sparse matrix of ``laplace_x`` acting on raveled (n1*n2,) fields.

    Symmetric with zero row sums; the x2 block is scaled per x1 row by
    h(x1)^2 + eps, which keeps symmetry because the scaling is constant
    along the differencing direction.
    """
    T1 = _neumann_1d(grid.n1, grid.dx1)
    T2 = _neumann_1d(grid.n2, grid.dx2)
    h_sq = vf(grid.x1) ** 2
    A = (1.0 + eps) * sparse.kron(T1, sparse.identity(grid.n2), format="csr")
    A = A + sparse.kron(sparse.diags(h_sq + eps), T2, format="csr")
    return A.tocsr()


def _face_velocities(grid: Grid, vf: VectorFieldFamily, drift):
    """Transport velocities on cell faces for drift = grad_X u.

    The conservative form of the forward equation moves mass with velocity
    (-d1, -h*d2) in Cartesian components; interior faces average the two
    neighbor cells, wall faces carry zero flux.
    """
    d1, d2 = (np.asarray(d, dtype=float) for d in drift)
    h = vf(grid.x1)
    v1 = np.zeros((grid.n1 + 1, grid.n2))
    v1[1:-1] = -0.5 * (d1[:-1] + d1[1:])
    v2 = np.zeros((grid.n1, grid.n2 + 1))
    v2[:, 1:-1] = -0.5 * (d2[:, :-1] + d2[:, 1:]) * h[:, None]
    return v1, v2


def fpe_flux_divergence(grid: Grid, vf: VectorFieldFamily, m, drift=None,
                        eps: float = 0.0):
    """Right-hand side of the conservative forward equation.

    Returns the flux-difference form of Delta_X m + div_X(m grad_X u)
    + eps * Laplacian(m) with first-order upwinding of the advective flux
    and zero-flux walls. The cell sum of the output telescopes to zero.
    """
    m = np.asarray(m, dtype=float)
    h_sq = vf(grid.x1) ** 2
    # net face fluxes: diffusive a * D+ m minus transport v * m_donor
    f1 = np.zeros((grid.n1 + 1, grid.n2))
    f1[1:-1] = (1.0 + eps) * np.diff(m, axis=0) / grid.dx1
    f2 = np.zeros((grid.n1, grid.n2 + 1))
    f2[:, 1:-1] = (h_sq[:, None] + eps) * np.diff(m, axis=1) / grid.dx2
    if drift is not None:
        v1, v2 = _face_velocities(grid, vf, drift)
        up1 = np.where(v1[1:-1] >= 0, m[:-1], m[1:])
        f1[1:-1] -= v1[1:-1] * up1
        up2 = np.where(v2[:, 1:-1] >= 0, m[:, :-1], m[:, 1:])
        f2[:, 1:-1] -= v2[:, 1:-1] * up2
    return np.diff(f1, axis=0) / grid.dx1 + np.diff(f2, axis=1) / grid.dx2


def advection_matrix(grid: Grid, vf: VectorFieldFamily, drift):
    """Sparse matrix of the upwind advective part of ``fpe_flux_divergence``.

    Column sums vanish, which is the discrete statement of mass
    conservation under transport.
    """
    n1, n2 = grid.n1, grid.n2
    v1, v2 = _face_velocities(grid, vf, drift)
    idx = np.arange(n1 * n2).reshape(n1, n2)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    # x1 faces between rows i and i+1: transport flux v*m_donor leaves the
    # upwind side and enters the downwind side
    v = v1[1:-1]
    donor = np.where(v >= 0, idx[:-1], idx[1:])
    add(idx[:-1], donor, -v / grid.dx1)
    add(idx[1:], donor, v / grid.dx1)
    v = v2[:, 1:-1]
    donor = np.where(v >= 0, idx[:, :-1], idx[:, 1:])
    add(idx[:, :-1], donor, -v / grid.dx2)
    add(idx[:, 1:], donor, v / grid.dx2)

    A = sparse.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n1 * n2, n1 * n2))
    return A.tocsr()


def implicit_diffusion_solve(grid: Grid, vf: VectorFieldFamily, rhs, reaction,
                             dt: float, eps: float = 0.0, x0=None,
                             matrix=None, rtol: float = 1e-10,
                             maxiter: int = 10_000):
    """Solve (I + dt (-Delta_X - eps*Laplacian + reaction)) v = rhs.

    Conjugate gradients with Jacobi preconditioning; the system is an
    M-matrix whenever 1 + dt*reaction > 0, so nonnegative right-hand sides
    produce nonnegative solutions.

    Raises SolverDiverged if the residual has not reached
    ``rtol * ||rhs||`` within ``maxiter`` iterations.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    b = np.asarray(rhs, dtype=float).ravel()
    if matrix is None:
        reaction = np.broadcast_to(np.asarray(reaction, dtype=float),
                                   (grid.n1, grid.n2))
        D = diffusion_matrix(grid, vf, eps)
        matrix = (sparse.identity(grid.n_cells, format="csr")
                  - dt * D + dt * sparse.diags(reaction.ravel())).tocsr()
    diag = matrix.diagonal()
    if np.any(diag <= 0):
        raise SolverDiverged("implicit system lost positive diagonal; "
                             "reaction too negative for this dt")
    precond = spla.LinearOperator(matrix.shape, lambda x: x / diag)
    x0 = None if x0 is None else np.asarray(x0, dtype=float).ravel()
    v, info = spla.cg(matrix, b, x0=x0, rtol=rtol, atol=0.0,
                      maxiter=maxiter, M=precond)
    if info > 0:
        raise SolverDiverged(f"CG stalled at {info} iterations")
    if info < 0:
        raise SolverDiverged("CG reported an illegal input or breakdown")
    return v.reshape(grid.n1, grid.n2)


class PrefactoredDiffusion:
    """LU-prefactorized backward-Euler diffusion step (I - dt*D)^(-1).

    Used by the forward measure march where the operator is constant in
    time and the mass budget (1e-12) is tighter than an iterative
    residual would comfortably give.
    """

    def __init__(self, grid: Grid, vf: VectorFieldFamily, dt: float,
                 eps: float = 0.0):
        self.grid = grid
        D = diffusion_matrix(grid, vf, eps)
        M = sparse.identity(grid.n_cells, format="csc") - dt * D.tocsc()
        self._lu = spla.splu(M.tocsc())
        self._matrix = M.tocsr()

    def solve(self, b):
        x = self._lu.solve(np.asarray(b, dtype=float).ravel())
        return x.reshape(self.grid.n1, self.grid.n2)

    @property
    def matrix(self):
        return self._matrix
