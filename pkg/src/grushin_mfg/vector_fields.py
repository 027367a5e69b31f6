"""Degenerate vector-field pair X1 = d/dx1, X2 = h(x1) d/dx2.

The whole geometry of the problem is carried by the scalar profile h: where
h vanishes the x2 direction becomes forbidden and the operator degenerates.
This module holds the profile catalog, the family container with its zero
set and degeneracy orders, and the commutator-depth (Hormander index)
estimator based on dyadic log-log slopes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonIsolatedRoot, SlopeUnstable

__all__ = ["VectorFieldFamily", "h_from_name", "hormander_index"]


@dataclass(frozen=True)
class VectorFieldFamily:
    """The pair {d/dx1, h(x1) d/dx2} together with the structure of h.

    Parameters
    ----------
    h : callable
        Vectorized profile h(x1).
    zero_set : tuple of float
        Roots of h, each isolated.
    kappa : tuple of int
        Order of the first nonvanishing derivative of h at each root,
        aligned with ``zero_set``.
    h_sup : float
        sup over the real line of |h|; ``inf`` is allowed here and only
        rejected by config validation.
    h_deriv : tuple of callables, optional
        Derivatives of h in increasing order, when available analytically.
    name : str
        Catalog name or "custom".
    """

    h: Callable[[np.ndarray], np.ndarray]
    zero_set: tuple = ()
    kappa: tuple = ()
    h_sup: float = math.inf
    h_deriv: tuple = ()
    name: str = "custom"

    def __post_init__(self):
        if len(self.zero_set) != len(self.kappa):
            raise ValueError("zero_set and kappa must align")
        roots = sorted(self.zero_set)
        for a, b in zip(roots, roots[1:]):
            if not b - a > 0:
                raise ValueError(f"roots {a} and {b} are not isolated")
        if any(k < 1 for k in self.kappa):
            raise ValueError("every degeneracy order must be a positive integer")

    def __call__(self, x1):
        return self.h(np.asarray(x1, dtype=float))

    def kappa_at(self, root: float) -> int:
        for r, k in zip(self.zero_set, self.kappa):
            if abs(r - root) <= 1e-12 * max(1.0, abs(r)):
                return int(k)
        raise KeyError(f"{root} is not a recorded root")

    def sup_on_box(self, L: float, samples: int = 4096) -> float:
        x = np.linspace(-L, L, samples)
        return float(np.abs(self(x)).max())


def _sin_family():
    derivs = (np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), np.sin)
    return dict(h=np.sin, h_sup=1.0, h_deriv=derivs, kappa_at_root=1,
                roots_in=lambda L: [k * math.pi for k in
                                    range(math.ceil(-L / math.pi), math.floor(L / math.pi) + 1)])


def _sigmoid_family():
    h = lambda x: x / np.sqrt(x * x + 1.0)
    return dict(h=h, h_sup=1.0, h_deriv=(), kappa_at_root=1, roots_in=lambda L: [0.0] if L > 0 else [])


def _linear_family():
    return dict(h=lambda x: np.asarray(x, dtype=float), h_sup=math.inf,
                h_deriv=(lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
                kappa_at_root=1, roots_in=lambda L: [0.0] if L > 0 else [])


def _const_family(c):
    return dict(h=lambda x, c=c: np.full_like(np.asarray(x, dtype=float), c),
                h_sup=abs(c), h_deriv=(lambda x: np.zeros_like(x),),
                kappa_at_root=None, roots_in=lambda L: [])


def _ratpow_family(a, b, C):
    # x^a / (x^b + C)^(a/b); |h| < 1 on R for even b, kappa = a at 0
    if C <= 0 or a < 1 or b < 1:
        raise ValueError("ratpow needs positive C and positive integer exponents")
    if b % 2:
        raise ValueError("ratpow needs an even denominator exponent to stay bounded")

    def h(x, a=a, b=b, C=C):
        x = np.asarray(x, dtype=float)
        return x ** a / (x ** b + C) ** (a / b)

    return dict(h=h, h_sup=1.0, h_deriv=(),
                kappa_at_root=a, roots_in=lambda L: [0.0] if L > 0 else [])


def _table_family(path):
    from scipy.interpolate import CubicSpline
    data = np.loadtxt(path, delimiter=",")
    x, hx = data[:, 0], data[:, 1]
    order = np.argsort(x)
    spline = CubicSpline(x[order], hx[order], extrapolate=False)
    lo, hi = x.min(), x.max()

    def h(t, spline=spline, lo=lo, hi=hi):
        t = np.asarray(t, dtype=float)
        return np.nan_to_num(spline(np.clip(t, lo, hi)), nan=0.0)

    def roots_in(L):
        rs = spline.roots(extrapolate=False)
        return [float(r) for r in rs if -L <= r <= L]

    return dict(h=h, h_sup=float(np.abs(hx).max()), h_deriv=(),
                kappa_at_root=None, roots_in=roots_in)


_CALL = re.compile(r"^(\w+)\((.*)\)$")


def h_from_name(name: str, L: float = 10.0) -> VectorFieldFamily:
    """Build a catalog vector-field family from a config string.

    Accepted names: ``sin``, ``sigmoid``, ``linear``, ``const(c)``,
    ``ratpow(a,b,C)``, ``table(path)``. Roots are recorded inside
    ``[-L, L]``.
    """
    name = name.strip()
    m = _CALL.match(name)
    head, args = (m.group(1), m.group(2)) if m else (name, "")
    if head == "sin":
        fam = _sin_family()
    elif head == "sigmoid":
        fam = _sigmoid_family()
    elif head == "linear":
        fam = _linear_family()
    elif head == "const":
        fam = _const_family(float(args or "1"))
    elif head == "ratpow":
        a, b, C = (s.strip() for s in args.split(","))
        fam = _ratpow_family(int(a), int(b), float(C))
    elif head == "table":
        fam = _table_family(args.strip())
    else:
        raise ValueError(f"unknown h catalog name: {name!r}")

    roots = tuple(fam["roots_in"](L))
    if fam["kappa_at_root"] is not None:
        kappas = tuple(fam["kappa_at_root"] for _ in roots)
    else:
        vf0 = VectorFieldFamily(h=fam["h"], zero_set=(), kappa=(), h_sup=fam["h_sup"], name=head)
        kappas = tuple(_estimate_kappa(vf0, r) for r in roots)
    return VectorFieldFamily(h=fam["h"], zero_set=roots, kappa=kappas,
                             h_sup=fam["h_sup"], h_deriv=fam["h_deriv"], name=name)


def _dyadic_slopes(vf, root, probe_radius, k_lo=4, k_hi=12):
    ks = np.arange(k_lo, k_hi + 1)
    r = probe_radius * 2.0 ** (-(ks - k_lo))
    vals = np.abs(vf(root + r))
    good = vals > 0
    if good.sum() < 3:
        raise SlopeUnstable(f"|h| underflows near root {root}, cannot probe")
    logs = np.log(vals[good])
    logr = np.log(r[good])
    pair_slopes = np.diff(logs) / np.diff(logr)
    lsq = np.polyfit(logr, logs, 1)[0]
    return pair_slopes, float(lsq)


def _estimate_kappa(vf, root, probe_radius=0.25):
    _, lsq = _dyadic_slopes(vf, root, probe_radius)
    return max(1, int(round(lsq)))


def hormander_index(vf: VectorFieldFamily, root: float, probe_radius: float) -> int:
    """Commutator depth needed to span the plane at a degenerate point.

    Estimates the order kappa of the first nonvanishing derivative of h at
    ``root`` as the slope of log|h| against log|x1 - root| over dyadic
    probe points, and returns kappa + 1: one bracket with X1 per missing
    derivative order plus the field X2 itself.

    Raises
    ------
    NonIsolatedRoot
        If another recorded root lies within ``probe_radius``.
    SlopeUnstable
        If consecutive dyadic slopes deviate more than 0.25 from the
        fitted integer order.
    """
    if probe_radius <= 0:
        raise ValueError("probe_radius must be positive")
    for other in vf.zero_set:
        if other != root and abs(other - root) < probe_radius:
            raise NonIsolatedRoot(f"root {other} inside probe radius of {root}")
    pair_slopes, lsq = _dyadic_slopes(vf, root, probe_radius)
    kappa = max(1, int(round(lsq)))
    if np.abs(pair_slopes - kappa).max() > 0.25:
        raise SlopeUnstable(
            f"slopes {np.round(pair_slopes, 3)} do not settle near an integer")
    return kappa + 1
