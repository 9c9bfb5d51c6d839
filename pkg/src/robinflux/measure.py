"""Robin and Dirichlet harmonic measures on boundary faces, and their checks.

The Robin measure from a pole ``X`` has density ``a G_R(X, .)`` against
``sigma``; by symmetry of ``L + a M`` a single Green solve with pole ``X``
gives every face weight. The Dirichlet measure is the boundary representation
of the pinned problem: the value at ``X`` of the solution whose pinned cells
carry the ``sigma``-weighted mean of the face data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .discretize import (
    boundary_mass_diagonal,
    constrained_system,
    indicator_boundary_rhs,
)
from .geometry import (
    BoundaryMeasure,
    GridDomain,
    boundary_distance,
    corkscrew_point,
    critical_rho_at,
    faces_in_ball,
    index_I,
    sigma_ball,
    surface_measure,
)
from .green import dirichlet_green, dirichlet_operator, robin_green, robin_operator
from .solve import cg_solve

__all__ = [
    "CheckReport",
    "CoverSpec",
    "HarmonicMeasure",
    "ainfty_diagnostic",
    "boundary_comparison_check",
    "bourgain_check",
    "build_cover",
    "change_of_pole_check",
    "dirichlet_harmonic_measure",
    "dirichlet_measure_vector",
    "doubling_check",
    "greenhm_equiv_check",
    "makarov_entropy",
    "robin_harmonic_measure",
    "smoothing_check",
]


@dataclass
class HarmonicMeasure:
    kind: str  # "robin" or "dirichlet"
    pole: int
    weights: BoundaryMeasure
    a: float = math.inf
    clipped: int = 0  # negative round-off weights set to zero

    @property
    def mass(self) -> float:
        return self.weights.total

    def of(self, faces) -> float:
        return self.weights.of(faces)

    def ball(self, domain, Q, r) -> float:
        return float(np.sum(self.weights.weights[faces_in_ball(domain, Q, min(r, domain.diam))]))


def _nonnegative(w, scale):
    """Zero out negative round-off; larger negative entries signal a real failure."""
    neg = w < 0
    if np.any(w[neg] < -1e-6 * scale):
        raise ArithmeticError(f"harmonic measure has negative weight {w.min():.3e}")
    return np.where(neg, 0.0, w), int(neg.sum())


def robin_harmonic_measure(domain, sigma, a, X, config=None, green=None) -> HarmonicMeasure:
    """Face weights ``a G_R(X, owner(f)) sigma_f`` from one Green solve."""
    if not a > 0:
        raise ValueError("Robin parameter must be positive")
    g = green if green is not None else robin_green(domain, sigma, a, X, config)
    w = a * g.field[domain.face_owner] * sigma.weights
    w, clipped = _nonnegative(w, np.max(np.abs(w)))
    return HarmonicMeasure("robin", g.pole, BoundaryMeasure(w), float(a), clipped)


def _pole_cell(domain, X):
    if isinstance(X, (int, np.integer)):
        return int(X)
    cell = domain.locate(X)
    if cell < 0:
        raise ValueError(f"pole {X} lies outside the domain")
    return cell


def dirichlet_harmonic_measure(domain, X, E, sigma=None, config=None) -> float:
    """``omega_D^X(E)`` from the pinned problem with indicator data on ``E``."""
    sigma = sigma if sigma is not None else surface_measure(domain)
    pole = _pole_cell(domain, X)
    owners = domain.owner_cells
    if pole in set(owners.tolist()):
        raise ValueError("pole lies in a pinned boundary cell")
    E = np.asarray(E)
    sel = np.zeros(domain.n_faces, dtype=bool)
    if E.dtype == bool:
        sel[:] = E
    else:
        sel[E.astype(np.int64)] = True
    mdiag = boundary_mass_diagonal(domain, sigma)
    hit = np.bincount(domain.face_owner, weights=np.where(sel, sigma.weights, 0.0),
                      minlength=domain.n_cells)
    values = np.divide(hit[owners], mdiag[owners], out=np.zeros(len(owners)), where=mdiag[owners] > 0)
    base = dirichlet_operator(domain)
    system = constrained_system(base.operator, owners, values, a=math.inf)
    u, _ = cg_solve(system, np.zeros(domain.n_cells), config)
    return float(u[pole])


def dirichlet_measure_vector(domain, X, sigma=None, config=None) -> HarmonicMeasure:
    """All face weights of ``omega_D^X`` from one adjoint solve.

    With ``G`` the pinned Green function of pole ``X``, an owner cell ``o``
    receives ``h^(n-2) sum G(j)`` over its free neighbours ``j``; the amount is
    shared among its faces in proportion to ``sigma``. This reproduces
    :func:`dirichlet_harmonic_measure` for every face set.
    """
    sigma = sigma if sigma is not None else surface_measure(domain)
    g = dirichlet_green(domain, X, config)
    system = dirichlet_operator(domain)
    owner_weight = -(system.coupling.T @ g.field[system.free])
    per_cell = np.zeros(domain.n_cells)
    per_cell[system.pinned] = owner_weight
    mdiag = boundary_mass_diagonal(domain, sigma)
    owner = domain.face_owner
    share = np.divide(sigma.weights, mdiag[owner], out=np.zeros(domain.n_faces), where=mdiag[owner] > 0)
    w = per_cell[owner] * share
    w, clipped = _nonnegative(w, np.max(np.abs(w)))
    return HarmonicMeasure("dirichlet", g.pole, BoundaryMeasure(w), math.inf, clipped)


def robin_data_solution(domain, sigma, a, E, config=None) -> np.ndarray:
    """``X -> omega_R^X(E)`` for every cell, from the indicator-data Robin problem."""
    system = robin_operator(domain, sigma, a)
    u, _ = cg_solve(system, indicator_boundary_rhs(domain, sigma, E, a), config)
    return u


# -- reports and sampling ----------------------------------------------------------------


@dataclass
class CheckReport:
    name: str
    C: float
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    min_pass_fraction: float = 0.95
    extra: dict = field(default_factory=dict)
    one_sided: bool = False  # lower bound only: ratio >= 1/C

    @property
    def evaluated(self) -> int:
        return len(self.rows)

    @property
    def pass_fraction(self) -> float:
        if not self.rows:
            return 0.0
        return sum(bool(r["pass"]) for r in self.rows) / len(self.rows)

    @property
    def achieved(self) -> float:
        """Worst two-sided factor ``max(ratio, 1/ratio)`` over evaluated samples."""
        vals = [r["ratio"] for r in self.rows if "ratio" in r]
        if not vals:
            return math.nan
        v = np.asarray(vals, dtype=float)
        with np.errstate(divide="ignore"):
            if self.one_sided:
                return float(np.max(1 / v))
            return float(np.max(np.maximum(v, 1 / v)))

    @property
    def passed(self) -> bool:
        return bool(self.rows) and self.pass_fraction >= self.min_pass_fraction and \
            self.extra.get("passed", True)

    @property
    def status(self) -> str:
        """``pass``, ``fail``, or ``skipped`` when no sample met the preconditions."""
        if not self.rows:
            return "skipped"
        return "pass" if self.passed else "fail"

    def to_dict(self):
        return {"check": self.name, "status": self.status, "C": self.C, "evaluated": self.evaluated,
                "skipped": len(self.skipped), "pass_fraction": self.pass_fraction,
                "achieved": self.achieved, "passed": self.passed, **self.extra}


class _Fields:
    """Per-check memo of Green solves and Robin measures keyed by (pole, a)."""

    def __init__(self, domain, sigma, config):
        self.domain, self.sigma, self.config = domain, sigma, config
        self._green, self._dir = {}, {}

    def green(self, pole, a):
        key = (int(pole), float(a))
        if key not in self._green:
            self._green[key] = robin_green(self.domain, self.sigma, a, int(pole), self.config)
        return self._green[key]

    def robin(self, pole, a):
        return robin_harmonic_measure(self.domain, self.sigma, a, int(pole), green=self.green(pole, a))

    def dirichlet(self, pole):
        if pole not in self._dir:
            self._dir[pole] = dirichlet_measure_vector(self.domain, int(pole), self.sigma, self.config)
        return self._dir[pole]

    @property
    def certificates(self):
        return [g.flux_certificate for g in self._green.values()]


def _scale_samples(domain, count, rng, r_min=None, r_max=None):
    """Seeded ``(face, r)`` pairs with ``r`` log-uniform on ``[r_min, r_max]``."""
    r_min = 4 * domain.h if r_min is None else r_min
    r_max = domain.diam / 10 if r_max is None else r_max
    faces = rng.choice(domain.n_faces, size=count, replace=domain.n_faces < count)
    lo, hi = math.log(r_min), math.log(max(r_max, r_min))
    radii = np.exp(rng.uniform(lo, hi, size=count))
    return [(int(f), float(r)) for f, r in zip(faces, radii)]


def deep_poles(domain, count, rng, exclude=None):
    """Seeded cells at depth at least half the maximal boundary distance."""
    delta = boundary_distance(domain)
    cand = np.flatnonzero(delta >= 0.5 * delta.max())
    if exclude is not None:
        cand = np.setdiff1d(cand, exclude)
    pick = rng.choice(cand, size=min(count, len(cand)), replace=False)
    return [int(p) for p in np.sort(pick)]


def _far_pole(domain, poles, Q, dist):
    for p in poles:
        if np.linalg.norm(domain.centers[p] - Q) >= dist:
            return p
    return None


def _index(domain, sigma, a, Q, r):
    return index_I(domain, sigma, a, Q, min(r, domain.diam))


# -- checks -------------------------------------------------------------------------------


def bourgain_check(domain, sigma, a, samples=32, M=50.0, seed=0, config=None,
                   min_pass_fraction=0.95, r_max=None) -> CheckReport:
    """``omega_R^{A_r(Q)}(B(Q, r)) >= min(1, I_Q(r)) / M`` at seeded ``(Q, r)``."""
    rng = np.random.default_rng(seed)
    fields = _Fields(domain, sigma, config)
    report = CheckReport("bourgain", M, min_pass_fraction=min_pass_fraction, one_sided=True)
    pairs = samples if isinstance(samples, list) else _scale_samples(domain, samples, rng, r_max=r_max)
    for f, r in pairs:
        Q = domain.face_center[f]
        if r < 4 * domain.h:
            report.skipped.append({"face": f, "r": r, "reason": "r < 4h"})
            continue
        ck = corkscrew_point(domain, Q, r)
        omega = fields.robin(ck.cell, a)
        lhs = omega.ball(domain, Q, r)
        rhs = min(1.0, _index(domain, sigma, a, Q, r))
        ratio = lhs / rhs
        report.rows.append({"face": f, "r": r, "pole": ck.cell, "omega": lhs, "bound": rhs,
                            "ratio": ratio, "pass": ratio >= 1 / M})
    ratios = [row["ratio"] for row in report.rows]
    report.extra = {"worst_ratio": min(ratios) if ratios else math.nan, "a": a,
                    "certificates": fields.certificates}
    return report


def greenhm_equiv_check(domain, sigma, a, samples=32, C=50.0, C_far=4.0, seed=0, config=None,
                        n_poles=4, min_pass_fraction=0.95, r_max=None) -> CheckReport:
    """``omega_R^X(B(Q,r)) ~ G_R(X, A_r(Q)) r^(n-2) min(1, I_Q(r))`` for ``X`` outside ``B(Q, C_far r)``.

    ``samples`` may be a count or a list of ``(Q, r, X)`` with ``X`` a point or cell.
    """
    rng = np.random.default_rng(seed)
    fields = _Fields(domain, sigma, config)
    report = CheckReport("greenhm_equiv", C, min_pass_fraction=min_pass_fraction)
    n = domain.dim
    if isinstance(samples, list):
        triples = [(np.asarray(Q, dtype=float), float(r), _pole_cell(domain, X)) for Q, r, X in samples]
    else:
        poles = deep_poles(domain, n_poles, rng)
        triples = []
        for f, r in _scale_samples(domain, samples, rng, r_max=r_max):
            Q = domain.face_center[f]
            triples.append((Q, r, _far_pole(domain, poles, Q, C_far * r)))
    for Q, r, X in triples:
        if X is None or np.linalg.norm(domain.centers[X] - Q) < C_far * r:
            report.skipped.append({"Q": Q.tolist(), "r": r, "reason": "no pole outside B(Q, C r)"})
            continue
        if r < 4 * domain.h:
            report.skipped.append({"Q": Q.tolist(), "r": r, "reason": "r < 4h"})
            continue
        ck = corkscrew_point(domain, Q, r)
        omega = fields.robin(X, a).ball(domain, Q, r)
        g = fields.green(X, a)(ck.cell)
        I = _index(domain, sigma, a, Q, r)
        rhs = g * r ** (n - 2) * min(1.0, I)
        ratio = omega / rhs if rhs > 0 else math.inf
        report.rows.append({"Qx": float(Q[0]), "Qy": float(Q[1]), "Qz": float(Q[-1]), "r": r,
                            "pole": X, "corkscrew": ck.cell, "index": I, "omega": omega,
                            "green": g, "ratio": ratio,
                            "pass": 1 / C <= ratio <= C, "branch": "dirichlet" if I >= 1 else "neumann"})
    report.extra = {"a": a, "certificates": fields.certificates,
                    "branches": sorted({row["branch"] for row in report.rows})}
    return report


def doubling_check(domain, sigma, a_list, samples=32, C_d=50.0, C_far=4.0, seed=0, config=None,
                   n_poles=4, spread_limit=2.0, r_max=None) -> CheckReport:
    """``omega_R^X(B(Q, 2r)) <= C_d omega_R^X(B(Q, r))`` with the constant tracked per ``a``.

    The same ``(Q, r, X)`` samples are used for every ``a``; the report
    passes when every constant is at most ``C_d`` and the largest is within
    ``spread_limit`` of the smallest.
    """
    a_list = [float(a) for a in np.atleast_1d(a_list)]
    rng = np.random.default_rng(seed)
    fields = _Fields(domain, sigma, config)
    report = CheckReport("doubling", C_d, min_pass_fraction=1.0)
    poles = deep_poles(domain, n_poles, rng)
    triples = []
    for f, r in _scale_samples(domain, samples, rng, r_max=r_max):
        Q = domain.face_center[f]
        X = _far_pole(domain, poles, Q, C_far * r)
        if X is None:
            report.skipped.append({"face": f, "r": r, "reason": "no pole outside B(Q, C r)"})
        else:
            triples.append((f, r, X))
    constants = {}
    for a in a_list:
        worst = 0.0
        for f, r, X in triples:
            Q = domain.face_center[f]
            omega = fields.robin(X, a)
            clipped = 2 * r > domain.diam
            ratio = omega.ball(domain, Q, 2 * r) / omega.ball(domain, Q, r)
            worst = max(worst, ratio)
            report.rows.append({"a": a, "face": f, "r": r, "pole": X, "ratio": ratio,
                                "clipped": clipped, "pass": ratio <= C_d})
        constants[a] = worst
    vals = list(constants.values())
    spread = max(vals) / min(vals) if vals and min(vals) > 0 else math.inf
    report.extra = {"constants": {f"{a:.6g}": c for a, c in constants.items()},
                    "spread": spread, "spread_limit": spread_limit,
                    "passed": spread <= spread_limit and max(vals, default=math.inf) <= C_d,
                    "certificates": fields.certificates}
    return report


def _half_split(domain, faces, rng):
    """Split ``faces`` by the median projection on a seeded direction."""
    v = rng.standard_normal(domain.dim)
    proj = domain.face_center[faces] @ v
    return faces[proj <= np.median(proj)]


def change_of_pole_check(domain, sigma, a, samples=16, C=50.0, C_far=4.0, seed=0, config=None,
                         n_poles=4, min_pass_fraction=0.95, E=None, r_max=None) -> CheckReport:
    """Double ratio ``[w^X(E)/w^X(B)] / [w^Y(E)/w^Y(B)]`` in ``[1/C, C]`` for ``E`` in ``B = B(Q, r)``."""
    rng = np.random.default_rng(seed)
    fields = _Fields(domain, sigma, config)
    report = CheckReport("change_of_pole", C, min_pass_fraction=min_pass_fraction)
    poles = deep_poles(domain, n_poles, rng)
    for f, r in _scale_samples(domain, samples, rng, r_max=r_max):
        Q = domain.face_center[f]
        far = [p for p in poles if np.linalg.norm(domain.centers[p] - Q) >= C_far * r]
        if len(far) < 2:
            report.skipped.append({"face": f, "r": r, "reason": "fewer than two far poles"})
            continue
        X, Y = far[0], far[-1]
        ball = faces_in_ball(domain, Q, r)
        sub = _half_split(domain, ball, rng) if E is None else np.intersect1d(E, ball)
        wx, wy = fields.robin(X, a), fields.robin(Y, a)
        ratio = (wx.of(sub) / wx.of(ball)) / (wy.of(sub) / wy.of(ball))
        report.rows.append({"face": f, "r": r, "X": X, "Y": Y, "ratio": ratio,
                            "pass": 1 / C <= ratio <= C})
    report.extra = {"a": a, "certificates": fields.certificates}
    return report


def boundary_comparison_check(domain, sigma, a, samples=16, C=50.0, K=4.0, seed=0, config=None,
                              data_sets=None, data_radius=None, points_per_ball=8,
                              min_pass_fraction=0.95, r_max=None) -> CheckReport:
    """``u(X)/v(X)`` within a factor ``C`` of ``u(A_r(Q))/v(A_r(Q))`` for ``X`` in ``B(Q, r)``.

    ``u`` and ``v`` are Robin harmonic measures of two disjoint face sets;
    by default two caps around antipodal boundary points. Balls whose
    ``K``-fold enlargement meets either set are flagged and skipped.
    """
    rng = np.random.default_rng(seed)
    report = CheckReport("boundary_comparison", C, min_pass_fraction=min_pass_fraction)
    if data_sets is None:
        f1 = int(rng.integers(domain.n_faces))
        P1 = domain.face_center[f1]
        f2 = int(np.argmax(np.linalg.norm(domain.face_center - P1, axis=1)))
        rad = data_radius or domain.diam / 10
        data_sets = (faces_in_ball(domain, P1, rad), faces_in_ball(domain, domain.face_center[f2], rad))
    E1, E2 = (np.asarray(e, dtype=np.int64) for e in data_sets)
    if len(np.intersect1d(E1, E2)):
        raise ValueError("data sets must be disjoint")
    u = robin_data_solution(domain, sigma, a, E1, config)
    v = robin_data_solution(domain, sigma, a, E2, config)
    support = domain.face_center[np.concatenate([E1, E2])]
    for f, r in _scale_samples(domain, samples, rng, r_max=r_max):
        Q = domain.face_center[f]
        if np.min(np.linalg.norm(support - Q, axis=1)) < K * r:
            report.skipped.append({"face": f, "r": r, "reason": "data inside B(Q, K r)"})
            continue
        ck = corkscrew_point(domain, Q, r)
        ref = u[ck.cell] / v[ck.cell]
        cells = np.asarray(domain.cell_tree.query_ball_point(Q, r), dtype=np.int64)
        cells = np.sort(cells[np.linalg.norm(domain.centers[cells] - Q, axis=1) < r])
        if len(cells) > points_per_ball:
            cells = np.sort(rng.choice(cells, size=points_per_ball, replace=False))
        for x in cells:
            ratio = (u[x] / v[x]) / ref
            report.rows.append({"face": f, "r": r, "cell": int(x), "u": float(u[x]), "v": float(v[x]),
                                "ratio": float(ratio), "pass": 1 / C <= ratio <= C})
    report.extra = {"a": a, "data_sizes": [len(E1), len(E2)]}
    return report


def smoothing_check(domain, sigma, a, samples=16, C=50.0, C_far=2.0, seed=0, config=None,
                    n_poles=4, min_pass_fraction=0.95, poles=None) -> CheckReport:
    """Robin density ``a G_R(X0, P)`` against ``omega_D^X0(B(P, r_P)) / sigma(B(P, r_P))``.

    ``r_P`` solves ``I_P(r_P) = 1``; points with ``r_P < 4h`` are skipped.
    ``poles`` overrides the seeded deep poles (points or cells).
    """
    rng = np.random.default_rng(seed)
    fields = _Fields(domain, sigma, config)
    report = CheckReport("smoothing", C, min_pass_fraction=min_pass_fraction)
    dirichlet_free = np.setdiff1d(np.arange(domain.n_cells), domain.owner_cells)
    candidates = deep_poles(domain, n_poles, rng) if poles is None else \
        [_pole_cell(domain, p) for p in poles]
    poles = [p for p in candidates if p in set(dirichlet_free.tolist())]
    faces = np.sort(rng.choice(domain.n_faces, size=min(samples, domain.n_faces), replace=False))
    for f in faces:
        P = domain.face_center[f]
        r_p = critical_rho_at(domain, sigma, a, P)
        if r_p < 4 * domain.h:
            report.skipped.append({"face": int(f), "r_P": r_p, "reason": "r_P < 4h"})
            continue
        X0 = _far_pole(domain, poles, P, C_far * r_p)
        if X0 is None:
            report.skipped.append({"face": int(f), "r_P": r_p, "reason": "no pole outside B(P, C r_P)"})
            continue
        density = a * fields.green(X0, a)(int(domain.face_owner[f]))
        avg = fields.dirichlet(X0).ball(domain, P, r_p) / sigma_ball(domain, sigma, P, r_p)
        ratio = density / avg
        report.rows.append({"face": int(f), "r_P": r_p, "a_r_P": a * r_p, "pole": X0,
                            "density": density, "dirichlet_average": avg, "ratio": ratio,
                            "pass": 1 / C <= ratio <= C})
    report.extra = {"a": a, "certificates": fields.certificates}
    return report


def _upper_envelope_fit(x, y, bins=8):
    """Slope and constant of ``y <= C x^theta`` from the per-bin maxima in log space."""
    lx, ly = np.log(x), np.log(y)
    edges = np.linspace(lx.min(), lx.max(), bins + 1)
    which = np.clip(np.digitize(lx, edges) - 1, 0, bins - 1)
    px, py = [], []
    for b in range(bins):
        m = which == b
        if m.any():
            k = np.flatnonzero(m)[np.argmax(ly[m])]
            px.append(lx[k])
            py.append(ly[k])
    if len(px) < 2:
        return math.nan, math.nan
    theta = float(np.polyfit(px, py, 1)[0])
    C = float(np.exp(np.max(ly - theta * lx)))
    return theta, C


def ainfty_diagnostic(domain, sigma, a_list, samples=64, theta_min=0.3, C_far=4.0, seed=0,
                      config=None, r_max=None) -> CheckReport:
    """Fit ``omega(E)/omega(B(P,s)) <= C (sigma(E)/sigma(B(P,s)))^theta`` per ``a``.

    Nested sets ``E`` in ``B(P, s)`` in ``B(Q, r)`` are drawn with the same
    seed for every ``a``; the pole is a deep cell outside ``B(Q, C_far r)``.
    """
    a_list = [float(a) for a in np.atleast_1d(a_list)]
    rng = np.random.default_rng(seed)
    fields = _Fields(domain, sigma, config)
    report = CheckReport("ainfty", theta_min, min_pass_fraction=0.0)
    poles = deep_poles(domain, 4, rng)
    nested = []
    for f, r in _scale_samples(domain, samples, rng, r_max=r_max):
        Q = domain.face_center[f]
        X = _far_pole(domain, poles, Q, C_far * r)
        if X is None:
            report.skipped.append({"face": f, "r": r, "reason": "no far pole"})
            continue
        inner = faces_in_ball(domain, Q, r / 2)
        P_face = int(rng.choice(inner))
        P = domain.face_center[P_face]
        s = max(float(r - np.linalg.norm(P - Q)) * rng.uniform(0.3, 1.0), domain.h)
        ball = faces_in_ball(domain, P, s)
        E_face = int(rng.choice(ball))
        t = s * rng.uniform(0.1, 1.0)
        E = np.intersect1d(faces_in_ball(domain, domain.face_center[E_face], t), ball)
        nested.append((f, r, X, ball, E))
    thetas, consts = {}, {}
    for a in a_list:
        xs, ys = [], []
        for f, r, X, ball, E in nested:
            omega = fields.robin(X, a)
            x = sigma.of(E) / sigma.of(ball)
            y = omega.of(E) / omega.of(ball)
            xs.append(x)
            ys.append(y)
            report.rows.append({"a": a, "face": f, "r": r, "pole": X, "sigma_ratio": x,
                                "omega_ratio": y, "pass": True})
        theta, C = _upper_envelope_fit(np.array(xs), np.array(ys))
        thetas[a], consts[a] = theta, C
    vals = np.array(list(thetas.values()))
    report.extra = {"theta": {f"{a:.6g}": t for a, t in thetas.items()},
                    "C_fit": {f"{a:.6g}": c for a, c in consts.items()},
                    "theta_spread": float(vals.max() - vals.min()) if len(vals) else math.nan,
                    "passed": bool(len(vals) and np.all(vals >= theta_min))}
    return report


# -- covers and entropy -----------------------------------------------------------------


@dataclass
class CoverSpec:
    radius: float
    centers: np.ndarray  # face indices
    overlap: int  # most centres within 2r of a single face
    seed: int = 0
    domain: GridDomain | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.centers)


def build_cover(domain: GridDomain, r: float, seed: int = 0) -> CoverSpec:
    """Greedy maximal ``r``-separated net of face centres in seeded order."""
    if not 4 * domain.h <= r:
        raise ValueError(f"cover radius {r:g} below 4h")
    r = min(r, domain.diam)
    rng = np.random.default_rng(seed)
    order = rng.permutation(domain.n_faces)
    tree = domain.face_tree
    blocked = np.zeros(domain.n_faces, dtype=bool)
    centers = []
    for f in order:
        if blocked[f]:
            continue
        centers.append(int(f))
        near = tree.query_ball_point(domain.face_center[f], r)
        blocked[near] = True
        blocked[f] = True
    centers = np.array(centers, dtype=np.int64)
    ctree = cKDTree(domain.face_center[centers])
    counts = ctree.query_ball_point(domain.face_center, 2 * r, return_length=True)
    return CoverSpec(r, centers, int(np.max(counts)), seed, domain)


def makarov_entropy(omega: HarmonicMeasure, cover: CoverSpec,
                    mode: str = "balls", ball_factor: float = 1.0) -> float:
    """``S = sum_i omega(B_i)^2`` over the cover.

    ``mode="balls"`` uses ``B_i = B(c_i, ball_factor r)``; ``mode="partition"``
    assigns every face to its nearest centre, for which ``1/N <= S <= 1``.
    """
    domain = cover.domain
    centers = domain.face_center[cover.centers]
    w = omega.weights.weights
    if mode == "partition":
        _, nearest = cKDTree(centers).query(domain.face_center)
        mass = np.bincount(nearest, weights=w, minlength=len(centers))
    elif mode == "balls":
        radius = min(ball_factor * cover.radius, domain.diam)
        mass = np.array([np.sum(w[faces_in_ball(domain, c, radius)]) for c in centers])
    else:
        raise ValueError(f"unknown entropy mode {mode!r}")
    return float(np.add.reduce(mass * mass))
