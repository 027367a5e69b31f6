"""Grid approximation of the control (Carnot-Caratheodory) metric.

Subunit curves may move at unit speed along x1 and at speed |h(x1)| along
x2, so a straight segment (d1, d2) crossed where h is roughly constant
takes time sqrt(d1^2 + (d2/|h|)^2). The metric is approximated by shortest
paths on the 8-neighbor cell graph with those anisotropic edge costs; a
small floor keeps the graph connected across the degeneracy lines, and its
edges are expensive enough that refined paths detour around them exactly
like true subunit curves.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import BallTouchesBoundary, DegeneratePair, OutOfDomain
from .grid import Grid
from .vector_fields import VectorFieldFamily

__all__ = ["CCMetricApprox", "cc_distance", "parabolic_distance",
           "ball_volume_dimension", "holder_seminorm"]


class CCMetricApprox:
    """Shortest-path metric on the anisotropic 8-neighbor cell graph.

    x2-direction edges at a cell column with |h| = eta cost
    dx2 / max(eta, h_floor); diagonal edges combine both speeds through
    the subunit time formula. Edge costs are positive and symmetric, so
    the graph distance is a genuine metric on cell centers.
    """

    def __init__(self, grid: Grid, vf: VectorFieldFamily, h_floor: float = 1e-6):
        self.grid = grid.spatial()
        self.vf = vf
        self.h_floor = float(h_floor)
        self._graph = None
        self._rows: dict[int, np.ndarray] = {}

    # -- graph ---------------------------------------------------------------

    def _h_eff(self, x1):
        return np.maximum(np.abs(self.vf(x1)), self.h_floor)

    def _build_graph(self):
        g = self.grid
        n1, n2 = g.n1, g.n2
        idx = np.arange(n1 * n2).reshape(n1, n2)
        x1 = g.x1
        rows, cols, vals = [], [], []

        def add(a, b, w):
            rows.append(a.ravel())
            cols.append(b.ravel())
            vals.append(np.broadcast_to(w, a.shape).ravel())

        # axis moves
        add(idx[:-1, :], idx[1:, :], np.full((n1 - 1, n2), g.dx1))
        w_vert = (g.dx2 / self._h_eff(x1))[:, None]
        add(idx[:, :-1], idx[:, 1:], np.broadcast_to(w_vert, (n1, n2 - 1)))
        # diagonal moves, h at the edge midpoint x1
        h_mid = self._h_eff(x1[:-1] + 0.5 * g.dx1)
        w_diag = np.sqrt(g.dx1 ** 2 + (g.dx2 / h_mid) ** 2)[:, None]
        add(idx[:-1, :-1], idx[1:, 1:], np.broadcast_to(w_diag, (n1 - 1, n2 - 1)))
        add(idx[:-1, 1:], idx[1:, :-1], np.broadcast_to(w_diag, (n1 - 1, n2 - 1)))

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        graph = coo_matrix((vals, (rows, cols)), shape=(n1 * n2, n1 * n2))
        return graph.tocsr()

    @property
    def graph(self):
        if self._graph is None:
            self._graph = self._build_graph()
        return self._graph

    def distance_field(self, p) -> np.ndarray:
        """Graph distances from the cell containing p, shape (n1, n2)."""
        if not self.grid.contains(p):
            raise OutOfDomain(f"point {p} outside [-L, L]^2")
        i, j = self.grid.cell_of(p)
        src = i * self.grid.n2 + j
        if src not in self._rows:
            if len(self._rows) > 128:
                self._rows.clear()
            d = dijkstra(self.graph, directed=False, indices=src)
            self._rows[src] = d.reshape(self.grid.n1, self.grid.n2)
        return self._rows[src]


def cc_distance(metric: CCMetricApprox, p, q) -> float:
    """Anisotropic shortest-path distance between the cells of p and q."""
    if not metric.grid.contains(q):
        raise OutOfDomain(f"point {q} outside [-L, L]^2")
    if tuple(metric.grid.cell_of(p)) == tuple(metric.grid.cell_of(q)):
        return 0.0
    d = metric.distance_field(p)
    return float(d[metric.grid.cell_of(q)])


def parabolic_distance(metric: CCMetricApprox, a, b) -> float:
    """sqrt(d_C(x, y)^2 + |t - s|) for space-time points a = (t, x)."""
    (t, p), (s, q) = a, b
    dc = cc_distance(metric, p, q)
    return float(np.sqrt(dc * dc + abs(t - s)))


def ball_volume_dimension(metric: CCMetricApprox, center, radii) -> float:
    """Least-squares slope of log |B_R| against log R.

    |B_R| counts cell areas with distance below R. Near a degeneracy the
    slope approaches the homogeneous dimension kappa + 2; away from the
    zero set of h it approaches the Euclidean value 2.
    """
    radii = np.asarray(sorted(radii), dtype=float)
    if len(radii) < 2 or radii[0] <= 0:
        raise ValueError("need at least two positive radii")
    d = metric.distance_field(center)
    rim = np.concatenate([d[0, :], d[-1, :], d[:, 0], d[:, -1]])
    if rim.min() < radii[-1]:
        raise BallTouchesBoundary(
            f"ball of radius {radii[-1]} reaches the truncation boundary")
    vols = np.array([np.count_nonzero(d < r) * metric.grid.cell_area
                     for r in radii])
    if np.any(vols == 0):
        raise ValueError("a requested radius contains no cells; refine the grid")
    slope = np.polyfit(np.log(radii), np.log(vols), 1)[0]
    return float(slope)


def holder_seminorm(field, metric: CCMetricApprox, alpha: float,
                    sample_pairs: int, times=None, seed: int = 0) -> float:
    """Sampled lower bound of the parabolic Holder seminorm.

    Maximizes |u(t,x) - u(s,y)| / d_P((t,x),(s,y))^alpha over a
    deterministic sample of pairs; x runs over a fixed pool of source
    cells (one shortest-path sweep each), y, t, s are free. Monotone
    nondecreasing in ``sample_pairs`` because the sample is a prefix of a
    fixed pseudorandom stream.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if sample_pairs < 1000:
        raise ValueError("need at least 1e3 sample pairs for a usable bound")
    u = np.asarray(field, dtype=float)
    if u.ndim == 2:
        u = u[None]
    if not np.all(np.isfinite(u)):
        raise ValueError("field must be finite everywhere")
    g = metric.grid
    nt = u.shape[0]
    if times is None:
        times = np.arange(nt, dtype=float)
    times = np.asarray(times, dtype=float)
    if len(times) != nt:
        raise ValueError("times must match the field's leading axis")

    # fixed source pool: strided sub-lattice, at most 49 sweep sources
    s1 = np.unique(np.linspace(0, g.n1 - 1, 7).astype(int))
    s2 = np.unique(np.linspace(0, g.n2 - 1, 7).astype(int))
    pool = [(i, j) for i in s1 for j in s2]

    rng = np.random.default_rng(seed)
    draws = rng.integers(0, 2 ** 31, size=(sample_pairs, 4))
    best = 0.0
    seen_valid = False
    dist_cache = {}
    for p in range(sample_pairs):
        src = pool[draws[p, 0] % len(pool)]
        tgt = (int(draws[p, 1] % g.n1), int(draws[p, 1] // g.n1 % g.n2))
        kt, ks = int(draws[p, 2] % nt), int(draws[p, 3] % nt)
        if src not in dist_cache:
            pnt = (g.x1[src[0]], g.x2[src[1]])
            dist_cache[src] = metric.distance_field(pnt)
        dc = dist_cache[src][tgt]
        dp = np.sqrt(dc * dc + abs(times[kt] - times[ks]))
        if dp == 0.0:
            continue
        seen_valid = True
        quot = abs(u[kt, src[0], src[1]] - u[ks, tgt[0], tgt[1]]) / dp ** alpha
        if quot > best:
            best = quot
    if not seen_valid:
        raise DegeneratePair("all sampled pairs coincide")
    return best
