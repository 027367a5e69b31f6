"""Euler-Maruyama simulation of the controlled degenerate dynamics.

The state follows

    dX1 = a1 dt + sqrt(2) dB1,
    dX2 = a2 h(X1) dt + sqrt(2) h(X1) dB2,

with feedback control a = -grad_X u looked up bilinearly in space and at
the nearest stored time slice. Where h vanishes the second component
cannot move: the scheme multiplies both its drift and its noise by
h(X1) evaluated at the pre-step position, so a particle sitting exactly
on a degeneracy line has X2 increments exactly zero for that step.

Noise is drawn from per-block counter-based streams (Philox) derived
from the run seed, so any sharding of whole blocks across workers would
reproduce the sequential result bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FeedbackOutOfDomain
from .grid import Grid
from .measures import GridMeasure
from .vector_fields import VectorFieldFamily

__all__ = ["SdeRun", "simulate_sde", "empirical_cost"]

_BLOCK = 1024
_TRACK = 100


def _bilinear(grid: Grid, values: np.ndarray, x1, x2):
    """Bilinear interpolation on cell centers, clamped at the outermost
    centers (the fields are flat there under the Neumann closure)."""
    f1 = (x1 + grid.L) / grid.dx1 - 0.5
    f2 = (x2 + grid.L) / grid.dx2 - 0.5
    i0 = np.clip(np.floor(f1).astype(np.int64), 0, grid.n1 - 2)
    j0 = np.clip(np.floor(f2).astype(np.int64), 0, grid.n2 - 2)
    t1 = np.clip(f1 - i0, 0.0, 1.0)
    t2 = np.clip(f2 - j0, 0.0, 1.0)
    v00 = values[i0, j0]
    v10 = values[i0 + 1, j0]
    v01 = values[i0, j0 + 1]
    v11 = values[i0 + 1, j0 + 1]
    return ((1 - t1) * (1 - t2) * v00 + t1 * (1 - t2) * v10
            + (1 - t1) * t2 * v01 + t1 * t2 * v11)


def _reflect(x, L):
    return L - np.abs(np.mod(x + L, 4.0 * L) - 2.0 * L)


@dataclass
class SdeRun:
    """Ensemble trajectory summary returned by :func:`simulate_sde`."""

    grid: Grid
    measures: list                       # GridMeasure per stored time slice
    terminal_states: np.ndarray          # (N, 2)
    control_cost: np.ndarray             # (N,) accumulated |alpha|^2 / 2
    coupling_cost: np.ndarray | None     # (N,) accumulated F along paths
    coupling_fingerprint: int | None
    seed: int
    n_particles: int
    dt_sde: float
    trajectories: np.ndarray = field(repr=False, default=None)  # (nt+1, <=100, 2)


def _sample_initial(m0: GridMeasure, rng_blocks, n):
    grid = m0.grid
    masses = m0.cell_masses().ravel()
    masses = masses / masses.sum()
    xs = np.empty((n, 2))
    start = 0
    for rng in rng_blocks:
        stop = min(start + _BLOCK, n)
        k = stop - start
        cells = rng.choice(masses.size, size=k, p=masses)
        i, j = np.divmod(cells, grid.n2)
        u = rng.random((k, 2))
        xs[start:stop, 0] = -grid.L + (i + u[:, 0]) * grid.dx1
        xs[start:stop, 1] = -grid.L + (j + u[:, 1]) * grid.dx2
        start = stop
        if start >= n:
            break
    return xs


def simulate_sde(grid: Grid, vf: VectorFieldFamily, m0: GridMeasure,
                 feedback, n_particles: int, seed: int,
                 coupling_field=None, substeps: int = 4) -> SdeRun:
    """Simulate the controlled ensemble and bin it at the grid times.

    ``feedback`` is the pair grad_X u per time slice (the control is its
    negative), or None for the uncontrolled dynamics. The SDE runs at
    dt / substeps, finer than the PDE step so the weak error sits below
    the comparison tolerance. If ``coupling_field`` (F per slice) is
    given, the running cost integrals are accumulated particle-wise for
    :func:`empirical_cost`.
    """
    if n_particles < 1000:
        raise ValueError("need at least 1e3 particles")
    if grid.nt < 1:
        raise ValueError("grid carries no time axis")
    if feedback is not None:
        g1 = np.asarray(feedback[0], dtype=float)
        g2 = np.asarray(feedback[1], dtype=float)
        if g1.shape != (grid.nt + 1, grid.n1, grid.n2):
            raise FeedbackOutOfDomain("feedback must cover every grid time slice")
        if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
            raise FeedbackOutOfDomain("feedback must be finite to interpolate")
    F = None
    fingerprint = None
    if coupling_field is not None:
        F = np.asarray(coupling_field, dtype=float)
        fingerprint = hash(F.tobytes())

    n_blocks = (n_particles + _BLOCK - 1) // _BLOCK
    rngs = [np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(b,))))
        for b in range(n_blocks)]
    xs = _sample_initial(m0, rngs, n_particles)

    dts = grid.dt / substeps
    root2dt = np.sqrt(2.0 * dts)
    control_cost = np.zeros(n_particles)
    coupling_cost = np.zeros(n_particles) if F is not None else None
    noise = np.empty((n_particles, 2))

    def bin_measure(states):
        i = np.clip(((states[:, 0] + grid.L) / grid.dx1).astype(np.int64),
                    0, grid.n1 - 1)
        j = np.clip(((states[:, 1] + grid.L) / grid.dx2).astype(np.int64),
                    0, grid.n2 - 1)
        counts = np.bincount(i * grid.n2 + j, minlength=grid.n_cells)
        dens = counts.reshape(grid.n1, grid.n2) / (n_particles * grid.cell_area)
        return GridMeasure(grid, dens)

    n_track = min(_TRACK, n_particles)
    track = np.empty((grid.nt + 1, n_track, 2))
    track[0] = xs[:n_track]
    measures = [bin_measure(xs)]

    for k in range(grid.nt):
        for q in range(substeps):
            t = (k + q / substeps) * grid.dt
            k_near = int(np.clip(round(t / grid.dt), 0, grid.nt))
            for b, rng in enumerate(rngs):
                s = b * _BLOCK
                e = min(s + _BLOCK, n_particles)
                noise[s:e] = rng.standard_normal((e - s, 2))
            if feedback is not None:
                a1 = -_bilinear(grid, g1[k_near], xs[:, 0], xs[:, 1])
                a2 = -_bilinear(grid, g2[k_near], xs[:, 0], xs[:, 1])
            else:
                a1 = a2 = 0.0
            if F is not None:
                coupling_cost += dts * _bilinear(grid, F[k_near],
                                                 xs[:, 0], xs[:, 1])
            control_cost += 0.5 * dts * (np.square(a1) + np.square(a2))
            hval = vf(xs[:, 0])
            xs[:, 0] += a1 * dts + root2dt * noise[:, 0]
            xs[:, 1] += (a2 * dts + root2dt * noise[:, 1]) * hval
            xs[:, 0] = _reflect(xs[:, 0], grid.L)
            xs[:, 1] = _reflect(xs[:, 1], grid.L)
        measures.append(bin_measure(xs))
        track[k + 1] = xs[:n_track]

    return SdeRun(grid=grid, measures=measures, terminal_states=xs,
                  control_cost=control_cost, coupling_cost=coupling_cost,
                  coupling_fingerprint=fingerprint, seed=seed,
                  n_particles=n_particles, dt_sde=dts, trajectories=track)


def empirical_cost(run: SdeRun, coupling_field, terminal,
                   return_stderr: bool = False):
    """Monte-Carlo estimate of the control cost functional.

    Averages the accumulated running cost plus the terminal cost G(X_T).
    With the optimal feedback this reproduces <u(0, .), m_0> up to
    statistical and discretization error by dynamic programming.
    """
    if coupling_field is not None:
        F = np.asarray(coupling_field, dtype=float)
        if run.coupling_fingerprint is None:
            raise ValueError("run was simulated without a coupling field; "
                             "pass coupling_field to simulate_sde")
        if hash(F.tobytes()) != run.coupling_fingerprint:
            raise ValueError("coupling_field differs from the one accumulated "
                             "during simulation")
        running = run.control_cost + run.coupling_cost
    else:
        running = run.control_cost
    G = np.asarray(terminal, dtype=float)
    gterm = _bilinear(run.grid, G, run.terminal_states[:, 0],
                      run.terminal_states[:, 1])
    samples = running + gterm
    mean = float(samples.mean())
    if return_stderr:
        return mean, float(samples.std(ddof=1) / np.sqrt(len(samples)))
    return mean
