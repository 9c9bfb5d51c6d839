import math

import numpy as np
import pytest

from robinflux.geometry import build_ball_domain, critical_rho_global, surface_measure
from robinflux.green import (
    WrongRegime,
    ball_oracle_green,
    check_dirichlet_regime,
    check_neumann_regime,
    dirichlet_green,
    monotonicity_check,
    robin_green,
)

C3 = 1 / (4 * math.pi)


def _at(domain, g, radius):
    """Green values at cells whose centre sits within h/2 of the sphere ``|X| = radius``."""
    r = np.linalg.norm(domain.centers - domain.centers[g.pole], axis=1)
    m = np.abs(r - radius) <= domain.h / 2
    return g.field[m], r[m]


def test_oracle_arithmetic():
    assert ball_oracle_green(3, 4.0, 1.0, 2.0) == pytest.approx(C3 * (0.5 - 0.25 + 1 / 16), rel=1e-14)
    assert ball_oracle_green(3, 4.0, 1.0, 2.0) == pytest.approx(0.0248680, abs=1e-7)
    assert ball_oracle_green(3, 4.0, math.inf, 2.0) == pytest.approx(C3 * 0.25)
    with pytest.raises(ValueError):
        ball_oracle_green(2, 4.0, 1.0, 2.0)


def test_robin_green_matches_oracle(ball125):
    d, s = ball125
    g = robin_green(d, s, 1.0, (0, 0, 0))
    vals, r = _at(d, g, 2.0)
    oracle = np.array([ball_oracle_green(3, 4.0, 1.0, x) for x in r])
    assert np.max(np.abs(vals - oracle) / oracle) <= 0.2
    assert abs(np.mean(vals) - 0.02487) / 0.02487 <= 0.2


def test_dirichlet_green_matches_oracle(ball125):
    d, _ = ball125
    g = dirichlet_green(d, (0, 0, 0))
    vals, r = _at(d, g, 2.0)
    assert abs(np.mean(vals) - 0.01989) / 0.01989 <= 0.2
    assert np.all(g.field[d.owner_cells] == 0)


def test_dirichlet_green_pointwise_bound(ball25):
    d, _ = ball25
    for Y in [(0, 0, 0), (2.0, 1.0, 0.0)]:
        g = dirichlet_green(d, Y)
        r = np.linalg.norm(d.centers - d.centers[g.pole], axis=1)
        m = r >= 3 * d.h
        assert np.all(g.field[m] <= 1.5 * C3 / r[m])


@pytest.mark.parametrize("a", [1e-2, 0.3, 1.0, 50.0])
def test_flux_certificate(ball25, a):
    d, s = ball25
    for Y in [(0, 0, 0), (3.0, 0.5, -1.0)]:
        g = robin_green(d, s, a, Y)
        assert g.flux_certificate == pytest.approx(1.0, abs=1e-8)


def test_flux_certificate_prefractal(pf1):
    d, s = pf1
    g = robin_green(d, s, 2.0 / s.total, d.centers[d.n_cells // 2])
    assert g.flux_certificate == pytest.approx(1.0, abs=1e-8)


def test_symmetry(ball25):
    d, s = ball25
    rng = np.random.default_rng(0)
    cells = rng.choice(d.n_cells, size=20, replace=False)
    fields = {int(c): robin_green(d, s, 0.7, int(c)).field for c in cells}
    for x, y in zip(cells[:10], cells[10:]):
        gxy, gyx = fields[int(y)][x], fields[int(x)][y]
        assert abs(gxy - gyx) <= 1e-8 * max(gxy, gyx)


def test_positivity(ball25):
    d, s = ball25
    assert np.all(robin_green(d, s, 1.0, (1, 1, 1)).field > 0)
    g = dirichlet_green(d, (1, 1, 1))
    free = np.setdiff1d(np.arange(d.n_cells), d.owner_cells)
    assert np.all(g.field[free] > 0)


def test_dirichlet_pole_on_boundary(ball25):
    d, _ = ball25
    with pytest.raises(ValueError):
        dirichlet_green(d, int(d.owner_cells[0]))


def test_monotonicity_margins_match_oracle_gap(ball125):
    d, s = ball125
    rep = monotonicity_check(d, s, (0, 0, 0), [0.5, 1.0, 2.0])
    assert rep.violations == 0 and rep.dirichlet_margin > 0
    gaps = [C3 / 16 * (1 / a - 1 / b) for a, b in [(0.5, 1.0), (1.0, 2.0)]]
    for margin, gap in zip(rep.margins, gaps):
        assert abs(margin - gap) / gap <= 0.2


def test_monotonicity_requires_increasing(ball25):
    d, s = ball25
    with pytest.raises(ValueError):
        monotonicity_check(d, s, (0, 0, 0), [1.0, 0.5])


def test_monotonicity_prefractal(pf1):
    d, s = pf1
    a = 1.0 / s.total
    free = np.setdiff1d(np.arange(d.n_cells), d.owner_cells)
    rep = monotonicity_check(d, s, int(free[len(free) // 3]), [a, 10 * a, 100 * a])
    assert rep.violations == 0


def test_neumann_regime_ball(ball125):
    d, s = ball125
    a = 1 / (64 * math.pi)
    rep = check_neumann_regime(d, s, a, (0, 0, 0))
    assert rep.passed and rep.extra["far"] > 0
    assert 1 / 20 <= rep.min_ratio and rep.max_ratio <= 20
    g = robin_green(d, s, a, (0, 0, 0))
    vals, r = _at(d, g, 3.5)
    oracle = np.array([ball_oracle_green(3, 4.0, a, x) for x in r])
    assert np.max(np.abs(vals - oracle) / oracle) <= 0.2


def test_neumann_regime_close_branch_only(ball25):
    d, s = ball25
    # rho = diam when a * sigma = diam^(n-2) in three dimensions
    a = d.diam / s.total
    assert critical_rho_global(s.total, a, 3) == pytest.approx(d.diam)
    rep = check_neumann_regime(d, s, a, (0, 0, 0))
    assert rep.extra["far"] == 0 and rep.extra["close"] == len(rep.rows)


def test_neumann_regime_prefractal(pf2):
    d, s = pf2
    rep = check_neumann_regime(d, s, 0.5 / s.total, d.centers[d.n_cells // 2])
    assert rep.passed and max(rep.max_ratio, 1 / rep.min_ratio) <= 20


def test_wrong_regime(ball25):
    d, s = ball25
    with pytest.raises(WrongRegime):
        check_neumann_regime(d, s, 10.0, (0, 0, 0))
    with pytest.raises(WrongRegime):
        check_dirichlet_regime(d, s, 1e-3)


def test_dirichlet_regime_large_a(ball125):
    d, s = ball125
    rep = check_dirichlet_regime(d, s, 1e6, sample_count=16)
    assert rep.passed and rep.extra["order_violations"] == 0
    deep = [r["ratio"] for r in rep.rows if r["ax"] == r["xi"] and r["ay"] == r["yi"]]
    assert deep and all(1.0 <= q <= 1.2 for q in deep)
    assert all(c == pytest.approx(1.0, abs=1e-8) for c in rep.certificates)


def test_dirichlet_regime_substitution(ball25):
    d, s = ball25
    rep = check_dirichlet_regime(d, s, 0.1, sample_count=16)
    assert rep.extra["substitutions"] > 0
    assert any(r["ax"] != r["xi"] for r in rep.rows)
    assert rep.extra["order_violations"] == 0


def test_oracle_convergence():
    errors = []
    for h in (0.5, 0.25, 0.125):
        d = build_ball_domain(4.0, h)
        g = robin_green(d, surface_measure(d), 1.0, (0, 0, 0))
        r = np.linalg.norm(d.centers - d.centers[g.pole], axis=1)
        m = (r >= 1) & (r <= 3)
        oracle = np.array([ball_oracle_green(3, 4.0, 1.0, x) for x in r[m]])
        errors.append(np.max(np.abs(g.field[m] - oracle) / oracle))
    assert errors[1] / errors[0] <= 0.7 and errors[2] / errors[1] <= 0.7
