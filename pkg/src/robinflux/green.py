"""Discrete Robin and Dirichlet Green functions and their regime checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretize import (
    assemble_boundary_mass,
    assemble_stiffness,
    boundary_mass_diagonal,
    dirichlet_system,
    point_source_rhs,
    robin_system,
)
from .geometry import (
    BoundaryMeasure,
    GridDomain,
    boundary_distance,
    corkscrew_point,
    critical_rho_global,
    critical_rho_X,
    nearest_boundary_face,
)
from .solve import SolverConfig, SolveReport, cg_solve

__all__ = [
    "GreenField",
    "RegimeCheckReport",
    "WrongRegime",
    "ball_oracle_green",
    "check_dirichlet_regime",
    "check_neumann_regime",
    "dirichlet_green",
    "monotonicity_check",
    "robin_green",
    "unit_sphere_area",
]

POLE_EXCLUSION = 3.0  # in cells


class WrongRegime(ValueError):
    """Parameters fall outside the regime a check was asked for."""


@dataclass
class GreenField:
    field: np.ndarray
    pole: int
    a: float
    flux_certificate: float | None
    report: SolveReport | None = None

    @property
    def is_dirichlet(self) -> bool:
        return math.isinf(self.a)

    def __call__(self, cell: int) -> float:
        return float(self.field[cell])


def unit_sphere_area(n: int) -> float:
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def robin_operator(domain: GridDomain, sigma: BoundaryMeasure, a: float):
    """``L + a M`` as a :class:`LinearSystem`, cached per (measure, a)."""
    key = ("robin", id(sigma), float(a))
    hit = domain.cache.get(key)
    if hit is None:
        L = assemble_stiffness(domain)
        M = assemble_boundary_mass(domain, sigma)
        hit = (sigma, robin_system(L, M, a))
        domain.cache[key] = hit
    return hit[1]


def dirichlet_operator(domain: GridDomain):
    if "dirichlet" not in domain.cache:
        domain.cache["dirichlet"] = dirichlet_system(assemble_stiffness(domain), domain)
    return domain.cache["dirichlet"]


def flux_certificate(domain, sigma, a, g) -> float:
    """``a * sum_f sigma_f * trace(g)_f``; equals one for a Robin Green function."""
    return float(a * np.add.reduce(sigma.weights * g[domain.face_owner]))


def robin_green(domain, sigma, a, Y, config: SolverConfig | None = None) -> GreenField:
    """Solve ``(L + a M) g = e_Y`` for the cell containing ``Y``.

    ``Y`` may be a point or an integer cell index.
    """
    system = robin_operator(domain, sigma, a)
    rhs = _pole_rhs(domain, Y)
    g, report = cg_solve(system, rhs, config)
    return GreenField(g, int(np.argmax(rhs)), float(a), flux_certificate(domain, sigma, a, g), report)


def dirichlet_green(domain, Y, config: SolverConfig | None = None) -> GreenField:
    """Green function with every boundary-owning cell pinned to zero."""
    system = dirichlet_operator(domain)
    rhs = _pole_rhs(domain, Y)
    pole = int(np.argmax(rhs))
    if pole in set(system.pinned.tolist()):
        raise ValueError("Dirichlet pole lies in a pinned boundary cell")
    g, report = cg_solve(system, rhs, config)
    return GreenField(g, pole, math.inf, None, report)


def _pole_rhs(domain, Y):
    if isinstance(Y, (int, np.integer)):
        rhs = np.zeros(domain.n_cells)
        rhs[int(Y)] = 1.0
        return rhs
    return point_source_rhs(domain, Y)


def ball_oracle_green(n: int, R: float, a: float, x: float) -> float:
    """Robin (or Dirichlet, ``a = inf``) Green function of ``B(0, R)`` with pole at 0."""
    if n < 3:
        raise ValueError("closed form needs n >= 3")
    if not 0 < x <= R:
        raise ValueError("need 0 < |X| <= R")
    c = 1.0 / ((n - 2) * unit_sphere_area(n))
    value = c / x ** (n - 2) - c / R ** (n - 2)
    if not math.isinf(a):
        value += (n - 2) * c / (a * R ** (n - 1))
    return value


@dataclass
class MonotonicityReport:
    a_list: list
    margins: list  # min over cells of G^{a_k} - G^{a_{k+1}}
    dirichlet_margin: float  # min over cells of G^{a_max} - G_D
    violations: int
    violating_cells: list = field(default_factory=list)
    flux_certificates: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self):
        return {"a_list": self.a_list, "margins": self.margins,
                "dirichlet_margin": self.dirichlet_margin, "violations": self.violations,
                "violating_cells": self.violating_cells[:50],
                "flux_certificates": self.flux_certificates, "passed": self.passed}


def monotonicity_check(domain, sigma, Y, a_list, config=None) -> MonotonicityReport:
    """Pointwise order ``G_D < G^b < G^a`` for ``a < b`` away from the pole cell."""
    a_list = [float(a) for a in a_list]
    if len(a_list) < 2:
        raise ValueError("need at least two Robin parameters")
    if any(b <= a for a, b in zip(a_list, a_list[1:])):
        raise ValueError("Robin parameters must be strictly increasing")
    fields = [robin_green(domain, sigma, a, Y, config) for a in a_list]
    gd = dirichlet_green(domain, Y, config)
    keep = np.ones(domain.n_cells, dtype=bool)
    keep[fields[0].pole] = False
    margins, bad = [], set()
    for lo, hi in zip(fields, fields[1:]):
        diff = (lo.field - hi.field)[keep]
        margins.append(float(diff.min()))
        bad.update(np.flatnonzero(keep)[diff <= 0].tolist())
    diff = (fields[-1].field - gd.field)[keep]
    bad.update(np.flatnonzero(keep)[diff <= 0].tolist())
    return MonotonicityReport(a_list, margins, float(diff.min()), len(bad), sorted(bad),
                              [f.flux_certificate for f in fields])


# -- regime checks -------------------------------------------------------------------

REGIME_COLUMNS = ["xi", "yi", "dist", "deltaX", "deltaY", "gr", "gd_at_corkscrews", "ratio"]


@dataclass
class RegimeCheckReport:
    regime: str
    C: float
    rows: list
    certificates: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r["ratio"] for r in self.rows], dtype=float)

    @property
    def min_ratio(self) -> float:
        return float(self.ratios.min()) if self.rows else math.nan

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max()) if self.rows else math.nan

    @property
    def passed(self) -> bool:
        if not self.rows:
            return False
        r = self.ratios
        ok = bool(np.all(np.isfinite(r)) and np.all(r > 0)
                  and r.min() >= 1 / self.C and r.max() <= self.C)
        return (ok and self.extra.get("order_violations", 0) == 0
                and self.extra.get("medium_violations", 0) == 0)

    def to_dict(self):
        return {"regime": self.regime, "C": self.C, "samples": len(self.rows),
                "min_ratio": self.min_ratio, "max_ratio": self.max_ratio,
                "achieved_C": max(self.max_ratio, 1 / self.min_ratio) if self.rows else math.nan,
                "certificates": self.certificates, "passed": self.passed, **self.extra}


def _sample_cells(domain, count, rng, exclude_from=None, min_dist=0.0, candidates=None):
    cand = np.arange(domain.n_cells) if candidates is None else np.asarray(candidates)
    if exclude_from is not None:
        d = np.linalg.norm(domain.centers[cand] - domain.centers[exclude_from], axis=1)
        cand = cand[d >= min_dist]
    if len(cand) == 0:
        return cand
    pick = rng.choice(cand, size=min(count, len(cand)), replace=False)
    return np.sort(pick)


def check_neumann_regime(domain, sigma, a, Y, sample_count=32, C=20.0, seed=0,
                         config=None) -> RegimeCheckReport:
    """``G_R ~ rho^(2-n)`` far from the pole and ``~ |X-Y|^(2-n)`` inside ``rho``."""
    n = domain.dim
    if a * sigma.total > domain.diam ** (n - 2):
        raise WrongRegime(f"a*sigma = {a * sigma.total:g} exceeds diam^(n-2) = {domain.diam ** (n - 2):g}")
    rho = critical_rho_global(sigma.total, a, n)
    g = robin_green(domain, sigma, a, Y, config)
    rng = np.random.default_rng(seed)
    cutoff = POLE_EXCLUSION * domain.h
    cells = _sample_cells(domain, sample_count, rng, g.pole, cutoff)
    delta = boundary_distance(domain)
    rows = []
    for x in cells:
        dist = float(np.linalg.norm(domain.centers[x] - domain.centers[g.pole]))
        far = dist >= max(rho, cutoff)
        scale = rho if far else dist
        value = g(x)
        rows.append({"xi": int(x), "yi": g.pole, "dist": dist, "deltaX": float(delta[x]),
                     "deltaY": float(delta[g.pole]), "gr": value, "gd_at_corkscrews": math.nan,
                     "ratio": value * scale ** (n - 2), "branch": "far" if far else "close"})
    n_far = sum(r["branch"] == "far" for r in rows)
    return RegimeCheckReport("neumann", C, rows, [g.flux_certificate],
                             {"rho": rho, "far": n_far, "close": len(rows) - n_far})


def check_dirichlet_regime(domain, sigma, a, sample_count=8, C=20.0, seed=0, n_poles=2,
                           config=None) -> RegimeCheckReport:
    """``G_R(X, Y) ~ G_D(A_X, A_Y)`` at corkscrew points of scale ``min(|X-Y|/10, rho_X)``."""
    n = domain.dim
    if a * sigma.total < domain.diam ** (n - 2):
        raise WrongRegime(f"a*sigma = {a * sigma.total:g} is below diam^(n-2) = {domain.diam ** (n - 2):g}")
    rng = np.random.default_rng(seed)
    delta = boundary_distance(domain)
    h = domain.h
    cutoff = POLE_EXCLUSION * h
    dirichlet_pinned = np.zeros(domain.n_cells, dtype=bool)
    dirichlet_pinned[domain.owner_cells] = True
    free_cells = np.flatnonzero(~dirichlet_pinned)
    poles = np.sort(rng.choice(free_cells, size=min(n_poles, len(free_cells)), replace=False))
    per_pole = max(1, int(math.ceil(sample_count / len(poles))))

    robin_cache, dir_cache = {}, {}

    def gr(pole):
        if pole not in robin_cache:
            robin_cache[pole] = robin_green(domain, sigma, a, int(pole), config)
        return robin_cache[pole]

    def gd(pole):
        if pole not in dir_cache:
            dir_cache[pole] = dirichlet_green(domain, int(pole), config)
        return dir_cache[pole]

    def substitute(cell, r):
        """``cell`` itself when deep enough, otherwise a corkscrew point near ``Q_cell``."""
        if delta[cell] >= r and not dirichlet_pinned[cell]:
            return int(cell), False
        q = nearest_boundary_face(domain, domain.centers[cell])
        ck = corkscrew_point(domain, domain.face_center[q], max(r, 4 * h))
        return ck.cell, True

    rows = []
    order_violations = medium_violations = medium_checked = substituted = 0
    for y in poles:
        rho_y = critical_rho_X(domain, sigma, a, domain.centers[y])
        # boundary-owning cells sit inside the sub-grid layer of width rho_X
        xs = _sample_cells(domain, per_pole, rng, y, cutoff, free_cells)
        for x in xs:
            dist = float(np.linalg.norm(domain.centers[x] - domain.centers[y]))
            rho_x = critical_rho_X(domain, sigma, a, domain.centers[x])
            ax, sx = substitute(x, min(dist / 10, rho_x))
            ay, sy = substitute(y, min(dist / 10, rho_y))
            substituted += sx + sy
            g_r = gr(y)(x)
            g_d_ck = gd(ay)(ax)
            ratio = g_r / g_d_ck if g_d_ck > 0 else math.inf
            if not dirichlet_pinned[x]:
                g_d = gd(y)(x)
                if g_d > g_r:
                    order_violations += 1
                if delta[x] >= dist and delta[y] >= dist:
                    medium_checked += 1
                    if not g_d <= g_r <= C * g_d:
                        medium_violations += 1
            rows.append({"xi": int(x), "yi": int(y), "dist": dist, "deltaX": float(delta[x]),
                         "deltaY": float(delta[y]), "gr": g_r, "gd_at_corkscrews": g_d_ck,
                         "ratio": ratio, "ax": ax, "ay": ay})
    extra = {"order_violations": order_violations, "medium_checked": medium_checked,
             "medium_violations": medium_violations, "substitutions": substituted}
    certs = [f.flux_certificate for f in robin_cache.values()]
    return RegimeCheckReport("dirichlet", C, rows, certs, extra)
