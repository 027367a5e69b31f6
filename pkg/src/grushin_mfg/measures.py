"""Probability measures on the grid and the Kantorovich-Rubinstein
distance d1 between them.

Three transport routes coexist with different cost/accuracy trades:

* ``mode="exact"``: min-cost flow on the bipartite cell graph with
  Euclidean ground cost, solved by column generation over a restricted
  arc set; optimality is certified by a full reduced-cost scan, so the
  returned value is exact up to the pricing tolerance.
* ``mode="entropic"``: debiased Sinkhorn value with geometrically
  annealed regularization (1e-1 L down to 1e-3 L), within a couple of
  percent of exact on overlapping measures at a fraction of the cost.
* ``d1_upper_bound``: cost of an explicit two-stage monotone coupling
  (marginal rearrangement then conditional rearrangement). Always an
  upper bound for d1, linear-time, used as a stopping gauge by the
  fixed-point loop.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .errors import GridMismatch, NotNormalized, SolverDiverged
from .grid import Grid

__all__ = ["GridMeasure", "MeasurePath", "d1", "d1_upper_bound",
           "second_moment", "time_holder_ratio", "measure_from_name"]

_MASS_TOL = 1e-8


class GridMeasure:
    """Nonnegative cell densities integrating to one."""

    def __init__(self, grid: Grid, weights, *, renormalize: bool = False):
        self.grid = grid.spatial()
        w = np.array(weights, dtype=float)
        if w.shape != (grid.n1, grid.n2):
            raise GridMismatch(f"weights shape {w.shape} vs grid "
                               f"({grid.n1}, {grid.n2})")
        if renormalize:
            w = np.clip(w, 0.0, None)
            total = w.sum() * self.grid.cell_area
            if total <= 0:
                raise NotNormalized("cannot normalize a zero measure")
            w /= total
        if w.min() < -1e-12 * max(w.max(), 1.0):
            raise NotNormalized(f"negative weight {w.min()}")
        mass = w.sum() * self.grid.cell_area
        if abs(mass - 1.0) > _MASS_TOL:
            raise NotNormalized(f"total mass {mass} != 1")
        w.setflags(write=False)
        self.weights = w

    @property
    def mass(self) -> float:
        return float(self.weights.sum() * self.grid.cell_area)

    def cell_masses(self) -> np.ndarray:
        return self.weights * self.grid.cell_area

    @classmethod
    def from_density(cls, grid: Grid, density_fn) -> "GridMeasure":
        """Midpoint quadrature of a continuous density, then renormalize."""
        X1, X2 = grid.meshgrid()
        return cls(grid, density_fn(X1, X2), renormalize=True)

    def coarsen(self, factor: int) -> "GridMeasure":
        g = self.grid
        if g.n1 % factor or g.n2 % factor:
            raise ValueError("cell counts must divide the coarsening factor")
        w = self.weights.reshape(g.n1 // factor, factor,
                                 g.n2 // factor, factor).mean(axis=(1, 3))
        return GridMeasure(Grid(g.L, g.n1 // factor, g.n2 // factor), w)


class MeasurePath:
    """One measure per time slice of a space-time grid."""

    def __init__(self, grid: Grid, densities, *, renormalize: bool = False):
        self.grid = grid
        d = np.array(densities, dtype=float)
        if d.shape != (grid.nt + 1, grid.n1, grid.n2):
            raise GridMismatch(f"path shape {d.shape} vs grid expectation "
                               f"({grid.nt + 1}, {grid.n1}, {grid.n2})")
        area = grid.cell_area
        if renormalize:
            d = np.clip(d, 0.0, None)
            d /= d.sum(axis=(1, 2), keepdims=True) * area
        masses = d.sum(axis=(1, 2)) * area
        if np.abs(masses - 1.0).max() > _MASS_TOL:
            raise NotNormalized(f"worst slice mass error "
                                f"{np.abs(masses - 1.0).max():.3e}")
        if d.min() < -1e-12 * max(d.max(), 1.0):
            raise NotNormalized(f"negative density {d.min()}")
        d.setflags(write=False)
        self.densities = d

    def __len__(self):
        return self.densities.shape[0]

    def slice(self, k: int) -> GridMeasure:
        return GridMeasure(self.grid, self.densities[k])

    @property
    def mass_errors(self) -> np.ndarray:
        return np.abs(self.densities.sum(axis=(1, 2)) * self.grid.cell_area - 1.0)


# --- catalog -----------------------------------------------------------------

def _gaussian(cx, cy, s):
    return lambda X1, X2: np.exp(-((X1 - cx) ** 2 + (X2 - cy) ** 2) / (2 * s * s))


def measure_from_name(grid: Grid, name: str) -> GridMeasure:
    """Catalog initial measures.

    ``gaussian(cx,cy,s)``, ``uniform``, or
    ``mixture(cx,cy,s,w; cx,cy,s,w; ...)`` with weights w summing to
    anything positive (renormalized).
    """
    name = name.strip()
    if name == "uniform":
        return GridMeasure.from_density(grid, lambda X1, X2: np.ones_like(X1))
    if name.startswith("gaussian(") and name.endswith(")"):
        cx, cy, s = (float(v) for v in name[9:-1].split(","))
        return GridMeasure.from_density(grid, _gaussian(cx, cy, s))
    if name.startswith("mixture(") and name.endswith(")"):
        parts = [p for p in name[8:-1].split(";") if p.strip()]
        comps = []
        for p in parts:
            cx, cy, s, w = (float(v) for v in p.split(","))
            comps.append((w, _gaussian(cx, cy, s)))

        def dens(X1, X2, comps=comps):
            return sum(w * g(X1, X2) for w, g in comps)

        return GridMeasure.from_density(grid, dens)
    if name.endswith(".csv"):
        from .grid import load_field_csv
        _, vals = load_field_csv(name)
        return GridMeasure(grid, vals[0], renormalize=True)
    raise ValueError(f"unknown measure catalog name: {name!r}")


# --- moments and regularity ---------------------------------------------------

def second_moment(mu: GridMeasure) -> float:
    """Integral of |x|^2 against the measure."""
    X1, X2 = mu.grid.meshgrid()
    return float(np.sum(mu.cell_masses() * (X1 ** 2 + X2 ** 2)))


def time_holder_ratio(path: MeasurePath, mode: str = "entropic",
                      gaps=None, d1_state=None, **d1_kwargs) -> float:
    """max over a dyadic (s, t) sample of d1(m_s, m_t) / sqrt(|t - s|).

    ``gaps`` are slice-index separations; by default all powers of two up
    to nt, with starts at both ends and the middle. ``mode`` may also be
    ``"upper"`` for the linear-time coupling bound.
    """
    nt = len(path) - 1
    if nt < 2:
        raise ValueError("need at least 3 time slices")
    dt = path.grid.dt
    if gaps is None:
        gaps = [g for g in (2 ** k for k in range(20)) if g <= nt]
    pairs = set()
    for g in gaps:
        for start in {0, (nt - g) // 2, nt - g}:
            pairs.add((start, start + g))
    best = 0.0
    for s, t in sorted(pairs):
        if mode == "upper":
            val = d1_upper_bound(path.slice(s), path.slice(t))
        else:
            val = d1(path.slice(s), path.slice(t), mode=mode,
                     state=d1_state, **d1_kwargs)
        best = max(best, val / np.sqrt((t - s) * dt))
    return best


# --- exact d1 by column generation --------------------------------------------

def _check_pair(mu: GridMeasure, nu: GridMeasure):
    if mu.grid != nu.grid:
        raise GridMismatch("measures live on different grids")


def _support(w, rel=1e-15):
    m = w.ravel()
    keep = np.flatnonzero(m > rel * m.max())
    masses = m[keep]
    return keep, masses / masses.sum()


def _monotone_plan(a, b):
    """Quantile coupling of two mass vectors: arc lists and masses."""
    ca, cb = np.cumsum(a), np.cumsum(b)
    tot = min(ca[-1], cb[-1])
    bp = np.unique(np.concatenate([ca, cb]))
    bp = np.concatenate([bp[bp < tot], [tot]])
    lo = np.concatenate([[0.0], bp[:-1]])
    mid = 0.5 * (lo + bp)
    i = np.minimum(np.searchsorted(ca, mid, side="left"), len(a) - 1)
    j = np.minimum(np.searchsorted(cb, mid, side="left"), len(b) - 1)
    return i, j, bp - lo


def _dedupe(ai, aj, n):
    key = np.unique(ai.astype(np.int64) * n + aj)
    return key // n, key % n


def d1_exact(mu: GridMeasure, nu: GridMeasure, pricing_tol: float = 1e-9,
             max_rounds: int = 60) -> float:
    """Certified min-cost flow value of the cell transport problem.

    Solves restricted transportation LPs over a growing candidate arc set
    (k nearest neighbors, the monotone quantile plan for feasibility, and
    all arcs priced negative by the current duals) until every reduced
    cost is above ``-pricing_tol``; weak duality then pins the value to
    within ``pricing_tol`` of the unrestricted optimum.
    """
    _check_pair(mu, nu)
    n_cells = mu.grid.n_cells
    if n_cells > 4096:
        raise GridMismatch("exact mode is limited to grids with <= 4096 cells")
    if np.array_equal(mu.weights, nu.weights):
        return 0.0
    pts = mu.grid.points()
    su, wu = _support(mu.cell_masses())
    sv, wv = _support(nu.cell_masses())
    P, Q = pts[su], pts[sv]
    n, m = len(su), len(sv)

    k0 = min(16, m)
    _, jn = cKDTree(Q).query(P, k=k0)
    ai = np.repeat(np.arange(n), k0)
    aj = np.asarray(jn).reshape(n, -1).ravel()
    mi, mj, _ = _monotone_plan(wu, wv)
    ai = np.concatenate([ai, mi])
    aj = np.concatenate([aj, mj])
    ai, aj = _dedupe(ai, aj, m)

    b = np.concatenate([wu, wv])
    for _ in range(max_rounds):
        cost = np.sqrt(((P[ai] - Q[aj]) ** 2).sum(-1))
        na = len(ai)
        A = sparse.coo_matrix(
            (np.ones(2 * na),
             (np.concatenate([ai, n + aj]), np.tile(np.arange(na), 2))),
            shape=(n + m, na)).tocsc()
        res = linprog(cost, A_eq=A, b_eq=b, bounds=(0, None), method="highs",
                      options={"presolve": False})
        if not res.success:
            raise SolverDiverged(f"restricted transport LP failed: {res.message}")
        y = res.eqlin.marginals
        fi, gj = y[:n], y[n:]
        new_i, new_j = [], []
        block = max(1, 2 ** 22 // max(m, 1))
        for s in range(0, n, block):
            D = np.sqrt(((P[s:s + block, None, :] - Q[None, :, :]) ** 2).sum(-1))
            rc = D - fi[s:s + block, None] - gj[None, :]
            bad = np.argwhere(rc < -pricing_tol)
            if len(bad):
                vals = rc[bad[:, 0], bad[:, 1]]
                order = np.argsort(vals)[:8192]
                new_i.append(bad[order, 0] + s)
                new_j.append(bad[order, 1])
        if not new_i:
            return float(res.fun)
        ai = np.concatenate([ai, np.concatenate(new_i)])
        aj = np.concatenate([aj, np.concatenate(new_j)])
        ai, aj = _dedupe(ai, aj, m)
    raise SolverDiverged(f"column generation did not certify optimality "
                         f"in {max_rounds} rounds")


# --- entropic d1 ---------------------------------------------------------------

def _cost_matrix(P, Q):
    return np.sqrt(((P[:, None, :] - Q[None, :, :]) ** 2).sum(-1))


def _lse_rows(M):
    mx = M.max(axis=1)
    np.subtract(M, mx[:, None], out=M)
    np.exp(M, out=M)
    return np.log(M.sum(axis=1)) + mx


def _alternate_pot(la, lb, C, eps_levels, inner=4, f=None, g=None,
                   final_inner=40, final_tol=1e-7):
    n, m = C.shape
    f = np.zeros(n) if f is None else f.copy()
    g = np.zeros(m) if g is None else g.copy()
    scratch_r = np.empty_like(C)
    scratch_c = np.empty((m, n))
    CT = np.ascontiguousarray(C.T)
    for li, eps in enumerate(eps_levels):
        last = li == len(eps_levels) - 1
        for it in range(final_inner if last else inner):
            np.add(g[None, :], lb[None, :] * eps, out=scratch_r)
            scratch_r -= C
            scratch_r /= eps
            f = -eps * _lse_rows(scratch_r)
            np.add(f[None, :], la[None, :] * eps, out=scratch_c)
            scratch_c -= CT
            scratch_c /= eps
            g_new = -eps * _lse_rows(scratch_c)
            dg = np.abs(g_new - g).max()
            g = g_new
            if last and dg < final_tol * eps:
                break
    return f, g


def _plan_cost(f, g, la, lb, C, eps):
    lP = (f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :]
    np.exp(lP, out=lP)
    return float(np.sum(lP * C))


def _eps_ladder(L):
    eps0, eps1 = 0.1 * L, 1e-3 * L
    k = int(np.ceil(np.log2(eps0 / eps1)))
    levels = list(eps0 * 0.5 ** np.arange(k))
    levels.append(eps1)
    return levels


def d1_entropic(mu: GridMeasure, nu: GridMeasure, state: dict | None = None) -> float:
    """Debiased annealed Sinkhorn value.

    Regularization anneals geometrically from 0.1 L to 1e-3 L; the value
    is the transport cost of the final plan minus the mean of the two
    self-transport costs, which cancels the bulk of the entropic bias.
    ``state`` may carry potentials from a previous call on nearby
    measures to skip the annealing (warm start).
    """
    _check_pair(mu, nu)
    if np.array_equal(mu.weights, nu.weights):
        return 0.0
    # canonical argument order keeps the value exactly symmetric
    if mu.weights.tobytes() > nu.weights.tobytes():
        mu, nu = nu, mu
    pts = mu.grid.points()
    su, wu = _support(mu.cell_masses())
    sv, wv = _support(nu.cell_masses())
    P, Q = pts[su], pts[sv]
    la, lb = np.log(wu), np.log(wv)
    L = mu.grid.L
    levels = _eps_ladder(L)
    eps1 = levels[-1]
    st = state if state is not None else {}
    if len(st) > 64:
        st.clear()
    hu = hash(mu.weights.tobytes())
    hv = hash(nu.weights.tobytes())

    def pair_value(A, B, lA, lB, key, kind):
        C = _cost_matrix(A, B)
        warm = st.get(key) or st.get(("last", kind))
        if warm is not None and warm[0].shape == (len(lA),) \
                and warm[1].shape == (len(lB),):
            # short re-annealing tail: tolerant to warm potentials from a
            # nearby (not identical) pair of measures
            f, g = _alternate_pot(lA, lB, C, [16 * eps1, 4 * eps1, eps1],
                                  inner=3, f=warm[0], g=warm[1])
        else:
            f, g = _alternate_pot(lA, lB, C, levels)
        st[key] = st[("last", kind)] = (f, g)
        return _plan_cost(f, g, lA, lB, C, eps1)

    ouv = pair_value(P, Q, la, lb, ("pair", hu, hv), "pair")
    ouu = pair_value(P, P, la, la, ("self", hu), "self_u")
    ovv = pair_value(Q, Q, lb, lb, ("self", hv), "self_v")
    return max(ouv - 0.5 * (ouu + ovv), 0.0)


def d1(mu: GridMeasure, nu: GridMeasure, mode: str = "exact",
       state: dict | None = None, **kwargs) -> float:
    """Kantorovich-Rubinstein distance with Euclidean ground cost."""
    if mode == "exact":
        return d1_exact(mu, nu, **kwargs)
    if mode == "entropic":
        return d1_entropic(mu, nu, state=state, **kwargs)
    raise ValueError(f"unknown d1 mode {mode!r}")


# --- linear-time upper bound ----------------------------------------------------

def _axis_bound(w_mu, w_nu, dx1, dx2):
    """Cost of: move columns along x1 by the marginal quantile plan, then
    fix conditionals along x2 by per-column quantile plans."""
    col_mu = w_mu.sum(axis=1)
    col_nu = w_nu.sum(axis=1)
    horiz = np.abs(np.cumsum(col_mu - col_nu)[:-1]).sum() * dx1
    i, j, w = _monotone_plan(col_mu, col_nu)
    xi = np.zeros_like(w_nu)
    np.add.at(xi, j, w_mu[i] * (w / np.maximum(col_mu[i], 1e-300))[:, None])
    vert = np.abs(np.cumsum(xi - w_nu, axis=1)[:, :-1]).sum() * dx2
    return horiz + vert


def d1_upper_bound(mu: GridMeasure, nu: GridMeasure) -> float:
    """Rigorous upper bound via an explicit two-stage monotone coupling.

    Marginal rearrangement along one axis (cost = exact 1D transport of
    the marginals) followed by conditional rearrangement along the other;
    the better of the two axis orders is returned. Never below d1, at
    most sqrt(2) above it for rigid shifts, and zero exactly when the
    measures coincide.
    """
    _check_pair(mu, nu)
    a, b = mu.cell_masses(), nu.cell_masses()
    dx1, dx2 = mu.grid.dx1, mu.grid.dx2
    bound1 = _axis_bound(a, b, dx1, dx2)
    bound2 = _axis_bound(a.T, b.T, dx2, dx1)
    return float(min(bound1, bound2))
