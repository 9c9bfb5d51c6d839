"""Lung model: total flow F(a), its derivative, the Dirichlet limit and the regimes.

``u_a`` is pinned to 1 on the cells of ``B(0, 1)`` and solves the Robin
problem elsewhere. The total flow is ``F(a) = a sigma.trace(u_a)``. Because
the stiffness annihilates constants, this equals the flux leaving the pinned
ring and the energy ``u.(L + a M).u`` up to solver tolerance.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .discretize import (
    assemble_stiffness,
    boundary_mass_diagonal,
    constrained_system,
    lung_constraint,
)
from .geometry import BoundaryMeasure, GridDomain, critical_rho_at, index_I
from .green import unit_sphere_area
from .solve import SolverConfig, cg, cg_solve

logger = logging.getLogger(__name__)

__all__ = [
    "DAHLBERG_C",
    "EmptyIntermediateRange",
    "FluxCurve",
    "InsufficientSpan",
    "LungSolution",
    "ball_flux_oracle",
    "dirichlet_flux",
    "energy_identity_check",
    "entropy_comparison",
    "flux_curve",
    "flux_derivative",
    "flux_difference",
    "lung_from_field",
    "intermediate_range",
    "median_critical_radius",
    "phase_transition_report",
    "solve_lung",
]

DAHLBERG_C = 4.0  # Dahlberg regime: 1/a <= ell / DAHLBERG_C; intermediate: 1/a >= DAHLBERG_C * ell


MAX_CACHED_SYSTEMS = 6
_CACHE_LOCK = threading.RLock()


class InsufficientSpan(ValueError):
    """A flux curve has too few points in a regime to fit it."""


class EmptyIntermediateRange(ValueError):
    """No Robin parameter lies between the Dahlberg and the plateau regimes."""


def ball_flux_oracle(a: float, R: float = 4.0) -> float:
    """Radial total flow on ``B(0, R)`` in 3-D: ``u = A + B/|x|``, ``F = 4 pi B``."""
    if a == 0:
        return 0.0
    if math.isinf(a):
        return 4 * math.pi / (1 - 1 / R)
    return 4 * math.pi / (1 - 1 / R + 1 / (a * R * R))


def dirichlet_flux_ball_b4(n: int = 3) -> float:
    """Dirichlet total flow of ``B(0, 4)``: ``(n-2) |dB_1| / (1 - 4^(2-n))``."""
    return (n - 2) * unit_sphere_area(n) / (1 - 4.0 ** (2 - n))


@dataclass
class LungSolution:
    a: float
    field: np.ndarray
    flux: float
    energy: float
    ring_flux: float
    iterations: int = 0
    residual: float = 0.0


def _lung_pins(domain):
    with _CACHE_LOCK:
        if "lung" not in domain.cache:
            domain.cache["lung"] = lung_constraint(domain)
        return domain.cache["lung"]


def _lung_system(domain, sigma, a):
    with _CACHE_LOCK:
        return _lung_system_locked(domain, sigma, a)


def _lung_system_locked(domain, sigma, a):
    key = ("lung", id(sigma), float(a))
    hit = domain.cache.get(key)
    if hit is None:
        L = assemble_stiffness(domain)
        pins, ones = _lung_pins(domain)
        mdiag = boundary_mass_diagonal(domain, sigma)
        if math.isinf(a):
            owners = domain.owner_cells
            pinned = np.concatenate([pins, owners])
            values = np.concatenate([ones, np.zeros(len(owners))])
            system = constrained_system(L, pinned, values, a=math.inf)
        else:
            system = constrained_system(L + a * sp.diags(mdiag), pins, ones, a=a)
        hit = (sigma, system, mdiag)
        old = [k for k in domain.cache if isinstance(k, tuple) and k[0] == "lung"]
        for k in old[:-MAX_CACHED_SYSTEMS + 1]:
            domain.cache.pop(k, None)  # keep memory bounded on large grids
        domain.cache[key] = hit
    return hit[1], hit[2]


def solve_lung(domain: GridDomain, sigma: BoundaryMeasure, a: float,
               config: SolverConfig | None = None) -> LungSolution:
    """Robin solution pinned to 1 on the source ball; ``a = 0`` gives ``u = 1``."""
    if a < 0:
        raise ValueError("Robin parameter must be nonnegative")
    _lung_pins(domain)  # rejects grids that cannot resolve the source ball
    if a == 0:
        return LungSolution(0.0, np.ones(domain.n_cells), 0.0, 0.0, 0.0)
    system, _ = _lung_system(domain, sigma, a)
    u, report = cg_solve(system, np.zeros(domain.n_cells), config)
    return lung_from_field(domain, sigma, a, u, report.iterations, report.residual)


def lung_from_field(domain, sigma, a, u, iterations=0, residual=0.0) -> LungSolution:
    """Flow, energy and ring flux of a lung field ``u`` (also used for cached fields)."""
    pins, _ = _lung_pins(domain)
    mdiag = boundary_mass_diagonal(domain, sigma)
    Lu = assemble_stiffness(domain) @ u
    flux = float(a * np.add.reduce(mdiag * u))
    energy = float(np.add.reduce(u * Lu) + a * np.add.reduce(mdiag * u * u))
    ring = float(np.add.reduce(Lu[pins]))
    return LungSolution(float(a), u, flux, energy, ring, iterations, residual)


@dataclass
class DirichletFlux:
    field: np.ndarray
    energy: float
    ring_flux: float
    boundary_flux: np.ndarray  # per boundary face, outward

    @property
    def value(self) -> float:
        return self.energy


def dirichlet_flux(domain, sigma, config=None) -> DirichletFlux:
    """``F(inf)``: boundary cells pinned to 0, the source ball to 1.

    The outward flux of each owner cell, ``-(L u)_o``, is split over its faces
    in proportion to their measure.
    """
    key = ("dirichlet_flux", id(sigma))
    with _CACHE_LOCK:
        if key in domain.cache:
            return domain.cache[key][1]
    system, mdiag = _lung_system(domain, sigma, math.inf)
    u, _ = cg_solve(system, np.zeros(domain.n_cells), config)
    L = assemble_stiffness(domain)
    Lu = L @ u
    pins, _ = _lung_pins(domain)
    energy = float(np.add.reduce(u * Lu))
    ring = float(np.add.reduce(Lu[pins]))
    owner = domain.face_owner
    share = np.divide(sigma.weights, mdiag[owner], out=np.zeros(domain.n_faces), where=mdiag[owner] > 0)
    out = DirichletFlux(u, energy, ring, -Lu[owner] * share)
    domain.cache[key] = (sigma, out)
    return out


def energy_identity_check(solution: LungSolution) -> float:
    """Relative gap ``|F - J| / F``."""
    if solution.a == 0:
        return 0.0
    return abs(solution.flux - solution.energy) / solution.flux


@dataclass
class FluxDerivative:
    value: float
    ring_value: float
    w: np.ndarray
    solution: LungSolution


def flux_derivative(domain, sigma, a, config=None, solution=None) -> FluxDerivative:
    """``F'(a) = sigma.u_a + a sigma.w_a`` with ``w_a`` the derivative of ``u_a`` in ``a``.

    ``w_a`` vanishes on the source ball and solves the Robin system with
    right-hand side ``-M u_a``.
    """
    if not a > 0:
        raise ValueError("Robin parameter must be positive")
    sol = solution or solve_lung(domain, sigma, a, config)
    system, mdiag = _lung_system(domain, sigma, a)
    rhs = -mdiag * sol.field
    b = rhs[system.free]  # w is pinned to 0 on the source ball
    wf, _ = cg(system.reduced, b, config)
    w = np.zeros(domain.n_cells)
    w[system.free] = wf
    value = float(np.add.reduce(mdiag * sol.field) + a * np.add.reduce(mdiag * w))
    pins, _ = _lung_pins(domain)
    ring = float(np.add.reduce((assemble_stiffness(domain) @ w)[pins]))
    if value < 0:
        raise ArithmeticError(f"negative flux derivative {value:g} at a={a:g}")
    return FluxDerivative(value, ring, w, sol)


@dataclass
class FluxDifference:
    magic: float
    direct: float

    @property
    def gap(self) -> float:
        return abs(self.magic - self.direct) / abs(self.direct) if self.direct else math.inf


def flux_difference(domain, sigma, a, config=None, solution=None) -> FluxDifference:
    """``F(inf) - F(a)`` as ``-int u_a d_nu u_inf dsigma`` and as a direct difference."""
    if not a > 0:
        raise ValueError("Robin parameter must be positive")
    sol = solution or solve_lung(domain, sigma, a, config)
    dflux = dirichlet_flux(domain, sigma, config)
    magic = float(np.add.reduce(sol.field[domain.face_owner] * dflux.boundary_flux))
    return FluxDifference(magic, dflux.energy - sol.flux)


# -- curves and regimes -----------------------------------------------------------------


@dataclass
class FluxCurve:
    a: np.ndarray
    F: np.ndarray
    F_inf_minus_F: np.ndarray
    direct_difference: np.ndarray
    J: np.ndarray
    derivative: np.ndarray
    f_infinity: float
    f_infinity_ring: float
    sigma_total: float
    ell: float | None
    diam: float
    dim: int
    regimes: list = field(default_factory=list)
    span_ok: bool = True
    fits: dict = field(default_factory=dict)

    def rows(self):
        for k in range(len(self.a)):
            yield {"a": float(self.a[k]), "F": float(self.F[k]),
                   "F_inf_minus_F": float(self.F_inf_minus_F[k]), "J": float(self.J[k]),
                   "regime": self.regimes[k]}

    @property
    def monotonicity_violations(self) -> int:
        return int(np.sum(np.diff(self.F) <= 0))


def regime_of(a, sigma_total, ell, diam, n, prefractal=True) -> str:
    if a * sigma_total <= 1:
        return "neumann"
    if ell is not None and prefractal and 1 / a <= ell / DAHLBERG_C:
        return "dahlberg"
    if ell is not None and prefractal and 1 / a < DAHLBERG_C * ell:
        return "transition"
    if ell is not None and prefractal and 1 / a <= sigma_total / diam ** (n - 2):
        return "intermediate"
    return "plateau"


def _is_prefractal(domain):
    return domain.metadata.get("kind") == "prefractal" and domain.metadata.get("depth", 0) >= 1


def flux_curve(domain, sigma, a_grid, config=None, jobs=1, cache=None) -> FluxCurve:
    """Solve the lung problem on an ascending grid of Robin parameters.

    ``cache`` is an optional mapping-like object with ``get(a)``/``put(a, sol)``
    used to reuse solves across runs.
    """
    a_grid = np.asarray(sorted(float(a) for a in a_grid))
    if np.any(a_grid <= 0):
        raise ValueError("Robin parameters must be positive")
    ell = domain.metadata.get("ell")
    lo_req = 1e-2 / sigma.total
    hi_req = 1e2 * max(1 / sigma.total, 1 / ell if ell else 0.0)
    span_ok = bool(a_grid[0] <= lo_req * (1 + 1e-9) and a_grid[-1] >= hi_req * (1 - 1e-9))
    if not span_ok:
        logger.warning("a-grid [%g, %g] does not span the recommended [%g, %g]",
                       a_grid[0], a_grid[-1], lo_req, hi_req)

    dflux = dirichlet_flux(domain, sigma, config)

    def point(a):
        sol = cache.get(a) if cache is not None else None
        if sol is None:
            sol = solve_lung(domain, sigma, a, config)
            if cache is not None:
                cache.put(a, sol)
        der = flux_derivative(domain, sigma, a, config, solution=sol)
        diff = flux_difference(domain, sigma, a, config, solution=sol)
        return sol, der.value, diff

    # operators are built once up front so that workers only read them
    errors = {}
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {a: pool.submit(point, a) for a in a_grid}
        results = {}
        for a, fut in futures.items():
            try:
                results[a] = fut.result()
            except Exception as exc:  # aggregated below
                errors[a] = exc
    else:
        results = {}
        for a in a_grid:
            try:
                results[a] = point(a)
            except Exception as exc:
                errors[a] = exc
    if errors:
        msg = "; ".join(f"a={a:g}: {exc}" for a, exc in errors.items())
        raise RuntimeError(f"flux curve failed at {len(errors)} point(s): {msg}")

    sols = [results[a][0] for a in a_grid]
    curve = FluxCurve(
        a=a_grid,
        F=np.array([s.flux for s in sols]),
        F_inf_minus_F=np.array([results[a][2].magic for a in a_grid]),
        direct_difference=np.array([results[a][2].direct for a in a_grid]),
        J=np.array([s.energy for s in sols]),
        derivative=np.array([results[a][1] for a in a_grid]),
        f_infinity=dflux.energy,
        f_infinity_ring=dflux.ring_flux,
        sigma_total=sigma.total,
        ell=ell,
        diam=domain.diam,
        dim=domain.dim,
        span_ok=span_ok,
    )
    pre = _is_prefractal(domain)
    curve.regimes = [regime_of(a, sigma.total, ell, domain.diam, domain.dim, pre) for a in a_grid]
    return curve


def _loglog_fit(x, y):
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


@dataclass
class PhaseReport:
    neumann_slope: float
    neumann_intercept: float
    neumann_points: int
    plateau_min_ratio: float
    plateau_threshold: float
    dahlberg_slope: float
    dahlberg_intercept: float
    dahlberg_points: int
    dahlberg_threshold: float
    boundaries: dict
    breakpoints: dict
    strictly_increasing: bool
    bounded_by_f_inf: bool

    def to_dict(self):
        return dict(self.__dict__)


def phase_transition_report(curve: FluxCurve, plateau_a_min=None, dahlberg_a_min=None,
                            neumann_a_max=None) -> PhaseReport:
    """Log-log slopes and plateau ratio of a flux curve.

    Defaults: Neumann fit on ``a <= 1/sigma``, plateau on ``a >= 1/sigma``,
    Dahlberg fit of ``F(inf) - F`` on ``1/a <= ell/4``.
    """
    a = curve.a
    if len(a) < 4:
        raise InsufficientSpan(f"curve has only {len(a)} points")
    inv_sigma = 1 / curve.sigma_total
    neumann_a_max = inv_sigma if neumann_a_max is None else neumann_a_max
    plateau_a_min = inv_sigma if plateau_a_min is None else plateau_a_min
    if dahlberg_a_min is None:
        if curve.ell is None:
            raise InsufficientSpan("no smooth scale recorded; pass dahlberg_a_min")
        dahlberg_a_min = DAHLBERG_C / curve.ell
    nm = a <= neumann_a_max * (1 + 1e-12)
    dm = a >= dahlberg_a_min * (1 - 1e-12)
    pm = a >= plateau_a_min * (1 - 1e-12)
    if nm.sum() < 2:
        raise InsufficientSpan("fewer than two points in the Neumann regime")
    if dm.sum() < 2:
        raise InsufficientSpan("fewer than two points in the Dahlberg regime")
    if pm.sum() < 1:
        raise InsufficientSpan("no point in the plateau regime")
    ns, ni = _loglog_fit(a[nm], curve.F[nm])
    ds, di = _loglog_fit(a[dm], curve.F_inf_minus_F[dm])
    f_inf = curve.f_infinity
    # Neumann line meets the plateau; Dahlberg line c/a reaches F(inf)
    bp_neumann = math.exp((math.log(f_inf) - ni) / ns)
    bp_dahlberg = math.exp((math.log(f_inf) - di) / ds)
    return PhaseReport(
        neumann_slope=ns, neumann_intercept=ni, neumann_points=int(nm.sum()),
        plateau_min_ratio=float(np.min(curve.F[pm] / f_inf)), plateau_threshold=plateau_a_min,
        dahlberg_slope=ds, dahlberg_intercept=di, dahlberg_points=int(dm.sum()),
        dahlberg_threshold=dahlberg_a_min,
        boundaries={"neumann_plateau": inv_sigma,
                    "dahlberg": DAHLBERG_C / curve.ell if curve.ell else None},
        breakpoints={"neumann_plateau": bp_neumann, "dahlberg": bp_dahlberg},
        strictly_increasing=bool(np.all(np.diff(curve.F) > 0)),
        bounded_by_f_inf=bool(np.all(curve.F < f_inf)),
    )


# -- entropy ------------------------------------------------------------------------------


@dataclass
class EntropyComparison:
    a: np.ndarray
    r_a: np.ndarray
    entropy: np.ndarray
    difference: np.ndarray
    ratio: np.ndarray
    index_fraction: np.ndarray  # share of sampled Q with I_Q(r_a) in [1/4, 4]
    band: float
    max_band: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.isfinite(self.ratio)) and self.band <= self.max_band)

    def to_dict(self):
        return {"a": self.a.tolist(), "r_a": self.r_a.tolist(), "entropy": self.entropy.tolist(),
                "difference": self.difference.tolist(), "ratio": self.ratio.tolist(),
                "index_fraction": self.index_fraction.tolist(), "band": self.band,
                "max_band": self.max_band, "passed": self.passed}


def intermediate_range(domain, sigma, C=DAHLBERG_C):
    """``[a_lo, a_hi]`` with ``C ell <= 1/a <= diam^(2-n) sigma``; raises if empty."""
    if not _is_prefractal(domain):
        raise EmptyIntermediateRange("domain has no pre-fractal scale")
    ell = domain.metadata["ell"]
    a_lo = domain.diam ** (domain.dim - 2) / sigma.total
    a_hi = 1 / (C * ell)
    if a_lo >= a_hi:
        raise EmptyIntermediateRange(f"C*ell = {C * ell:g} exceeds sigma/diam^(n-2)")
    return a_lo, a_hi


def median_critical_radius(domain, sigma, a, n_points=32, seed=0):
    """Median of ``rho_Q`` over seeded boundary faces, and the share of faces with
    ``I_Q(r_a)`` in ``[1/4, 4]``."""
    rng = np.random.default_rng(seed)
    faces = np.sort(rng.choice(domain.n_faces, size=min(n_points, domain.n_faces), replace=False))
    Qs = domain.face_center[faces]
    r_a = float(np.median([critical_rho_at(domain, sigma, a, Q) for Q in Qs]))
    idx = np.array([index_I(domain, sigma, a, Q, r_a) for Q in Qs])
    return r_a, float(np.mean((idx >= 0.25) & (idx <= 4)))


def entropy_comparison(domain, sigma, a_grid=None, count=5, n_points=32, seed=0,
                       max_band=100.0, config=None) -> EntropyComparison:
    """Compare ``F(inf) - F(a)`` with ``r_a^(2-n) S(omega_D^0, r_a, 2)`` over the intermediate range."""
    from .measure import build_cover, dirichlet_measure_vector, makarov_entropy

    a_lo, a_hi = intermediate_range(domain, sigma)
    if a_grid is None:
        a_grid = np.geomspace(a_lo, a_hi, count + 2)[1:-1]
    a_grid = np.asarray(sorted(a_grid), dtype=float)
    if np.any(a_grid < a_lo * (1 - 1e-9)) or np.any(a_grid > a_hi * (1 + 1e-9)):
        raise EmptyIntermediateRange("a-grid leaves the intermediate range")
    omega = dirichlet_measure_vector(domain, np.zeros(domain.dim), sigma, config)
    n = domain.dim
    r_list, s_list, d_list, frac = [], [], [], []
    for a in a_grid:
        r_a, fraction = median_critical_radius(domain, sigma, a, n_points, seed)
        cover = build_cover(domain, r_a, seed)
        S = makarov_entropy(omega, cover)
        diff = flux_difference(domain, sigma, a, config).magic
        r_list.append(r_a)
        s_list.append(S)
        d_list.append(diff)
        frac.append(fraction)
    r = np.array(r_list)
    S = np.array(s_list)
    D = np.array(d_list)
    ratio = D / (r ** (2 - n) * S)
    band = float(ratio.max() / ratio.min())
    return EntropyComparison(a_grid, r, S, D, ratio, np.array(frac), band, max_band)
