"""Run configuration: one flat JSON document, hashed canonically, with
standing-assumption checks (H1)-(H6) turned into a machine-readable
validation report."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .coupling import Coupling
from .errors import AssumptionViolated
from .grid import Grid
from .measures import GridMeasure, measure_from_name, second_moment
from .vector_fields import VectorFieldFamily, h_from_name, hormander_index

__all__ = ["RunConfig", "ValidationReport", "validate"]


@dataclass
class RunConfig:
    h_name: str = "sin"
    L: float = 3.0
    n1: int = 64
    n2: int = 64
    T: float = 0.5
    nt: int = 64
    sigma: float | None = None          # kernel bandwidth, None -> 0.2 L
    lambda_F: float = 1.0
    lambda_G: float = 1.0
    base_f: str = "quadratic"
    base_g: str = "zero"
    initial_measure: str = "gaussian(0.6,0.0,0.5)"
    eps: float = 0.0
    theta: float = 0.5
    tol_fp: float | None = None         # None -> 1e-4 * L
    k_max: int = 100
    seed: int = 0
    n_particles: int = 100_000
    out_dir: str = ""
    formats: tuple = ("csv",)

    # -- serialization ---------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        """Accepts either the flat key set or the grouped layout
        {geometry: {...}, time: {...}, coupling: {...}, solver: {...},
        outputs: {...}, initial_measure: ...}."""
        flat = {}
        groups = {"geometry": ("h_name", "L", "n1", "n2"),
                  "time": ("T", "nt"),
                  "coupling": ("sigma", "lambda_F", "lambda_G",
                               "base_f", "base_g"),
                  "solver": ("eps", "theta", "tol_fp", "k_max", "seed",
                             "n_particles"),
                  "outputs": ("out_dir", "formats")}
        alias = {"dir": "out_dir", "N_particles": "n_particles"}
        for key, val in doc.items():
            if key in groups and isinstance(val, dict):
                for k2, v2 in val.items():
                    flat[alias.get(k2, k2)] = v2
            else:
                flat[alias.get(key, key)] = val
        known = set(cls.__dataclass_fields__)
        unknown = set(flat) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**flat)
        if isinstance(cfg.formats, list):
            cfg.formats = tuple(cfg.formats)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["formats"] = list(self.formats)
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    # -- builders ----------------------------------------------------------

    def build_grid(self) -> Grid:
        return Grid(self.L, self.n1, self.n2, self.T, self.nt)

    def build_vf(self) -> VectorFieldFamily:
        return h_from_name(self.h_name, L=self.L)

    def build_coupling(self, grid=None) -> Coupling:
        grid = grid or self.build_grid()
        return Coupling(grid, sigma=self.sigma, lambda_F=self.lambda_F,
                        lambda_G=self.lambda_G, base_f=self.base_f,
                        base_g=self.base_g)

    def build_m0(self, grid=None) -> GridMeasure:
        grid = grid or self.build_grid()
        return measure_from_name(grid, self.initial_measure)

    def build_problem(self):
        from .mfg import MfgProblem
        grid = self.build_grid()
        return MfgProblem(grid=grid, vf=self.build_vf(),
                          coupling=self.build_coupling(grid),
                          m0=self.build_m0(grid), eps=self.eps,
                          theta=self.theta, tol_fp=self.tol_fp,
                          k_max=self.k_max, seed=self.seed,
                          n_particles=self.n_particles,
                          config_hash=self.config_hash)


@dataclass
class ValidationReport:
    entries: list = field(default_factory=list)

    def add(self, name, status, detail, **measured):
        self.entries.append({"assumption": name, "status": status,
                             "detail": detail, "measured": measured})

    @property
    def ok(self) -> bool:
        return all(e["status"] != "fail" for e in self.entries)

    @property
    def warnings(self) -> list:
        return [e for e in self.entries if e["status"] == "warn"]

    def failures(self) -> list:
        return [e for e in self.entries if e["status"] == "fail"]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "entries": self.entries}

    def raise_on_failure(self):
        bad = self.failures()
        if bad:
            first = bad[0]
            raise AssumptionViolated(first["assumption"], first["detail"])


def validate(config: RunConfig) -> ValidationReport:
    """Check (H1)-(H6) with measured quantities.

    A constant h (empty zero set) is downgraded to a warning: nothing
    degenerates, the run simply never exercises the degenerate machinery.
    """
    rep = ValidationReport()
    grid = config.build_grid()

    # (H1) bounded profile
    try:
        vf = config.build_vf()
    except Exception as exc:
        rep.add("H1", "fail", f"cannot build h: {exc}")
        return rep
    sampled = vf.sup_on_box(config.L)
    if math.isfinite(vf.h_sup):
        rep.add("H1", "pass", "sup|h| finite", h_sup=vf.h_sup,
                h_sup_on_box=sampled)
    else:
        rep.add("H1", "fail", "sup|h| over the line is infinite",
                h_sup_on_box=sampled)

    # (H2) nonempty isolated zero set with finite degeneracy order
    roots = list(vf.zero_set)
    if not roots:
        rep.add("H2", "warn", "zero set empty: non-degenerate; degenerate "
                              "pipeline not exercised", roots=[])
    else:
        gaps = np.diff(sorted(roots))
        kappas = []
        status, detail = "pass", "roots isolated with finite order"
        for r in roots:
            try:
                probe = 0.25 if len(roots) == 1 else \
                    min(0.25, 0.45 * float(np.min(np.abs(np.array(roots)[
                        np.array(roots) != r] - r))))
                kappas.append(hormander_index(vf, r, probe) - 1)
            except Exception as exc:
                status, detail = "fail", f"order estimation failed at {r}: {exc}"
                kappas.append(None)
        if roots and any(k is None for k in kappas):
            pass
        elif list(vf.kappa) and kappas != list(vf.kappa):
            detail = "estimated orders disagree with catalog"
            status = "fail"
        rep.add("H2", status, detail, roots=[float(r) for r in roots],
                kappa=kappas, min_gap=float(gaps.min()) if len(gaps) else None)

    # (H3)/(H4) coupling regularity by construction
    try:
        coupling = config.build_coupling(grid)
        gk1, gk2 = np.gradient(coupling.smooth(coupling._kernel),
                               grid.dx1, grid.dx2)
        lip = abs(config.lambda_F) * float(np.hypot(gk1, gk2).max())
        rep.add("H3", "pass", "smooth kernel coupling is Lipschitz",
                kernel_lipschitz=lip, sigma=coupling.sigma)
        rep.add("H4", "pass", "uniform bound over probability measures",
                F_bound=coupling.f_bound())
    except Exception as exc:
        rep.add("H3", "fail", f"coupling construction failed: {exc}")
        return rep

    # (H5) monotonicity
    if config.lambda_F >= 0 and config.lambda_G >= 0:
        rep.add("H5", "pass", "squared-norm coupling is monotone",
                lambda_F=config.lambda_F, lambda_G=config.lambda_G)
    else:
        rep.add("H5", "fail", "negative coupling strength flips monotonicity",
                lambda_F=config.lambda_F, lambda_G=config.lambda_G)

    # (H6) initial measure
    try:
        m0 = config.build_m0(grid)
        rim = (m0.weights[0, :].sum() + m0.weights[-1, :].sum()
               + m0.weights[1:-1, 0].sum()
               + m0.weights[1:-1, -1].sum()) * grid.cell_area
        status = "warn" if rim > 1e-8 else "pass"
        detail = ("initial mass touches the truncation boundary"
                  if status == "warn" else "smooth unit-mass density")
        rep.add("H6", status, detail, mass=m0.mass,
                second_moment=second_moment(m0), boundary_mass=float(rim))
    except Exception as exc:
        rep.add("H6", "fail", f"initial measure invalid: {exc}")

    return rep
