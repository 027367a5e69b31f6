"""Nonlocal cost couplings F(x, m) and G(x, m_T).

The measure enters only through a double smoothing with one even kernel:
F = base_f + lambda_F * (rho * rho * m). Applying the same discrete
convolution twice makes the monotonicity integral an exact squared norm,

    int (F(., mu) - F(., nu)) d(mu - nu) = lambda_F * ||rho * (mu - nu)||^2,

so the Lasry-Lions condition holds by construction, and smoothness of the
kernel gives the Lipschitz and uniform-bound properties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import NotNormalized
from .grid import Grid
from .measures import GridMeasure, d1
from .cc_metric import CCMetricApprox, cc_distance

__all__ = ["Coupling", "eval_F", "eval_G", "verify_monotone", "verify_lipschitz"]


def _cutoff(xi, L):
    # C^1 taper: 1 on |xi| <= 0.8 L, cos^2 ramp to 0 at |xi| = L
    a = np.abs(xi)
    ramp = np.cos(0.5 * np.pi * np.clip((a - 0.8 * L) / (0.2 * L), 0.0, 1.0)) ** 2
    return ramp


def _base_from_name(name: str, grid: Grid):
    name = (name or "zero").strip()
    X1, X2 = grid.meshgrid()
    if name == "zero":
        return np.zeros((grid.n1, grid.n2))
    if name == "quadratic":
        chi = _cutoff(X1, grid.L) * _cutoff(X2, grid.L)
        return 0.5 * (X1 ** 2 + X2 ** 2) * chi
    if name.startswith("table(") and name.endswith(")"):
        from .grid import load_field_csv
        _, vals = load_field_csv(name[6:-1])
        if vals[0].shape != (grid.n1, grid.n2):
            raise ValueError("tabulated base cost does not match the grid")
        return vals[0]
    raise ValueError(f"unknown base cost name {name!r}")


@dataclass
class Coupling:
    """Monotone nonlocal coupling built from a truncated Gaussian kernel.

    sigma defaults to 0.2 L; the kernel is cut at 4 sigma and renormalized
    to unit integral so the smoothed field of a probability measure is a
    mollified density.
    """

    grid: Grid
    sigma: float | None = None
    lambda_F: float = 1.0
    lambda_G: float = 1.0
    base_f: str = "quadratic"
    base_g: str = "zero"
    _kernel: np.ndarray = field(init=False, repr=False)
    _base_f_field: np.ndarray = field(init=False, repr=False)
    _base_g_field: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.sigma is None:
            self.sigma = 0.2 * self.grid.L
        if self.sigma <= 0:
            raise ValueError("kernel bandwidth must be positive")
        k1 = int(np.ceil(4 * self.sigma / self.grid.dx1))
        k2 = int(np.ceil(4 * self.sigma / self.grid.dx2))
        z1 = np.arange(-k1, k1 + 1) * self.grid.dx1
        z2 = np.arange(-k2, k2 + 1) * self.grid.dx2
        K = np.exp(-(z1[:, None] ** 2 + z2[None, :] ** 2) / (2 * self.sigma ** 2))
        self._kernel = K / (K.sum() * self.grid.cell_area)
        self._base_f_field = _base_from_name(self.base_f, self.grid)
        self._base_g_field = _base_from_name(self.base_g, self.grid)

    def smooth(self, density: np.ndarray) -> np.ndarray:
        """One pass of rho * density (zero continuation outside the box)."""
        return fftconvolve(density, self._kernel, mode="same") * self.grid.cell_area

    def smooth2(self, density: np.ndarray) -> np.ndarray:
        return self.smooth(self.smooth(density))

    @property
    def kernel_sup(self) -> float:
        return float(self._kernel.max())

    def f_bound(self) -> float:
        """Uniform bound on |F| over all probability measures."""
        return float(np.abs(self._base_f_field).max()
                     + abs(self.lambda_F) * self.smooth(self._kernel).max())


def _require_measure(m):
    if not isinstance(m, GridMeasure):
        raise NotNormalized("coupling evaluation needs a normalized GridMeasure")


def eval_F(coupling: Coupling, m: GridMeasure) -> np.ndarray:
    """Grid field of F(., m) = base_f + lambda_F rho*rho*m."""
    _require_measure(m)
    return coupling._base_f_field + coupling.lambda_F * coupling.smooth2(m.weights)


def eval_G(coupling: Coupling, m_T: GridMeasure) -> np.ndarray:
    _require_measure(m_T)
    return coupling._base_g_field + coupling.lambda_G * coupling.smooth2(m_T.weights)


def monotonicity_integral(coupling: Coupling, mu: GridMeasure,
                          nu: GridMeasure) -> float:
    """int (F(., mu) - F(., nu)) d(mu - nu), a squared norm by construction."""
    delta = mu.weights - nu.weights
    F_diff = coupling.lambda_F * coupling.smooth2(delta)
    return float(np.sum(F_diff * delta) * coupling.grid.cell_area)


def _random_measure(grid, rng):
    cx, cy = rng.uniform(-0.5 * grid.L, 0.5 * grid.L, size=2)
    s = rng.uniform(0.1 * grid.L, 0.4 * grid.L)
    X1, X2 = grid.meshgrid()
    dens = np.exp(-((X1 - cx) ** 2 + (X2 - cy) ** 2) / (2 * s * s)) + 1e-3
    return GridMeasure(grid, dens, renormalize=True)


def verify_monotone(coupling: Coupling, trials: int, seed: int = 0) -> dict:
    """Empirical check of the monotonicity condition on random measure pairs.

    Returns the minimum observed integral; for the shipped coupling this
    is a squared norm and cannot go below -1e-10, while a sign-flipped
    fixture (lambda_F < 0) is detected immediately.
    """
    if trials < 10:
        raise ValueError("need at least 10 trials")
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(trials):
        mu = _random_measure(coupling.grid, rng)
        nu = _random_measure(coupling.grid, rng)
        direct = np.sum((eval_F(coupling, mu) - eval_F(coupling, nu))
                        * (mu.weights - nu.weights)) * coupling.grid.cell_area
        vals.append(float(direct))
    vals = np.array(vals)
    return {"trials": trials, "min_integral": float(vals.min()),
            "max_integral": float(vals.max()),
            "monotone": bool(vals.min() >= -1e-10)}


def verify_lipschitz(coupling: Coupling, metric: CCMetricApprox, trials: int,
                     seed: int = 0, d1_mode: str = "exact") -> dict:
    """Empirical Lipschitz quotient of F over random pairs (x, mu), (y, nu).

    Quotient |F(x, mu) - F(y, nu)| / (d_C(x, y) + d1(mu, nu)); the report
    carries the maximum, which should stay bounded under grid refinement.
    """
    if trials < 10:
        raise ValueError("need at least 10 trials")
    grid = coupling.grid
    rng = np.random.default_rng(seed)
    quotients = []
    for _ in range(trials):
        mu = _random_measure(grid, rng)
        nu = _random_measure(grid, rng)
        p = rng.uniform(-0.9 * grid.L, 0.9 * grid.L, size=2)
        q = rng.uniform(-0.9 * grid.L, 0.9 * grid.L, size=2)
        Fmu = eval_F(coupling, mu)
        Fnu = eval_F(coupling, nu)
        ip, jp = grid.cell_of(p)
        iq, jq = grid.cell_of(q)
        denom = cc_distance(metric, p, q) + d1(mu, nu, mode=d1_mode)
        if denom == 0.0:
            continue
        quotients.append(abs(Fmu[ip, jp] - Fnu[iq, jq]) / denom)
    if not quotients:
        return {"trials": trials, "max_quotient": 0.0, "quotients": []}
    return {"trials": trials, "max_quotient": float(np.max(quotients)),
            "quotients": [float(q) for q in quotients]}
