import math

import numpy as np
import pytest

from regime_hjb.errors import SingularMatrix
from regime_hjb.model import CostCoeffs, GrowthBound, ModelParams
from regime_hjb.subsuper import (BracketPair, SubCoeffs, _reduced_bisection, b_residual,
                                 build_coeffs, check_inequalities, d_residual, eval_sub,
                                 solve_B, solve_D)

UNIT_M = GrowthBound(1.0, 1.0)


# -- independent oracles --------------------------------------------------------

def _g(B1, B2, p, M):
    """Quadratic coefficient system written out term by term."""
    k1, k2 = p.k
    a1, a2 = p.a
    l1, l2 = p.lam
    g1 = -4 * B1**2 + 2 * M.M1 / k1**2 + (2 / k1**2) * (l1 + a1) * k1 * B1 - 2 * a1 * (k2 / k1**2) * B2
    g2 = -4 * B2**2 + 2 * M.M2 / k2**2 + (2 / k2**2) * (l2 + a2) * k2 * B2 - 2 * a2 * (k1 / k2**2) * B1
    return g1, g2


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or mid in (lo, hi):
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scan_oracle(p, M, box=5.0, step=1e-3, chunk=250):
    """Grid scan of max|G| over [-box, 0]^2, then nested bisection near the best cell."""
    grid = np.arange(-box, step / 2, step)
    best = (np.inf, 0.0, 0.0)
    for s in range(0, grid.size, chunk):
        B1 = grid[s:s + chunk, None]
        g1, g2 = _g(B1, grid[None, :], p, M)
        err = np.maximum(np.abs(g1), np.abs(g2))
        i, j = np.unravel_index(np.argmin(err), err.shape)
        if err[i, j] < best[0]:
            best = (err[i, j], float(B1[i, 0]), float(grid[j]))
    _, b1, b2 = best

    def b2_of(B1):
        return _bisect(lambda B2: _g(B1, B2, p, M)[1], -1e3, 0.0)

    lo, hi = b1 - 3 * step, min(b1 + 3 * step, 0.0)
    root1 = _bisect(lambda B1: _g(B1, b2_of(B1), p, M)[0], lo, hi)
    return (root1, b2_of(root1)), best


def cramer_D(p, M, B):
    k1, k2 = p.k
    a1, a2 = p.a
    l1, l2 = p.lam
    A = [[2 * (l1 + a1) / k1, -2 * a1 * k2 / k1**2], [-2 * a2 * k1 / k2**2, 2 * (l2 + a2) / k2]]
    rhs = [2 * p.dim * B[0] - 2 * M.M1 / k1**2, 2 * p.dim * B[1] - 2 * M.M2 / k2**2]
    det = A[0][0] * A[1][1] - A[0][1] * A[1][0]
    assert det == pytest.approx(4 * (l1 * l2 + l1 * a2 + l2 * a1) / (k1 * k2), rel=1e-12)
    return ((rhs[0] * A[1][1] - A[0][1] * rhs[1]) / det, (A[0][0] * rhs[1] - A[1][0] * rhs[0]) / det)


def random_params(rng):
    cost = tuple(CostCoeffs(*rng.uniform(0, 3, size=3)) for _ in range(2))
    return ModelParams(dim=int(rng.integers(1, 4)), k1=rng.uniform(0.2, 3), k2=rng.uniform(0.2, 3),
                       a1=rng.uniform(0.05, 3), a2=rng.uniform(0.05, 3),
                       lambda1=rng.uniform(0.05, 5), lambda2=rng.uniform(0.05, 5), cost=cost)


# -- tests --------------------------------------------------------------------------

def test_unit_B_matches_quadratic_root_and_scan(unit):
    B = solve_B(unit, UNIT_M)
    # symmetric reduction 2B^2 - B - 1 = 0, negative root
    assert B == pytest.approx(((1 - 3) / 4, (1 - 3) / 4), abs=1e-15)
    oracle, _ = scan_oracle(unit, UNIT_M)
    assert np.max(np.abs(np.array(B) - oracle)) <= 1e-12


def test_unit_D(unit):
    D = solve_D(unit, UNIT_M, (-0.5, -0.5))
    assert D == pytest.approx((-1.5, -1.5), abs=1e-14)
    assert D == pytest.approx(cramer_D(unit, UNIT_M, (-0.5, -0.5)), abs=1e-14)


def test_degenerate():
    p = ModelParams()
    assert solve_B(p, GrowthBound(0, 0)) == (0.0, 0.0)
    assert solve_D(p, GrowthBound(0, 0), (0.0, 0.0)) == pytest.approx((0.0, 0.0), abs=0)
    co = build_coeffs(p, GrowthBound(0.0, 0.0))
    assert co.degenerate and co.B == (0, 0) and co.D == (0, 0)
    assert eval_sub(co, 3.7, 1) == 1.0


def test_asym_scan_oracle(asym, asym_cf):
    B = solve_B(asym, UNIT_M)
    assert B[0] < 0 and B[1] < 0
    oracle, (err, *_) = scan_oracle(asym, UNIT_M)
    assert err < 1e-2
    assert np.max(np.abs(np.array(B) - oracle)) <= 1e-12
    assert np.max(np.abs(b_residual(B, asym, UNIT_M))) <= 1e-12
    # with f = |x|^2 and M = 1 the quadratic exponents coincide with the closed form slopes
    assert B == pytest.approx(asym_cf.m, abs=1e-13)
    D = solve_D(asym, UNIT_M, B)
    assert D[0] < 0 and D[1] < 0
    assert np.max(np.abs(d_residual(D, B, asym, UNIT_M))) <= 1e-12
    assert D == pytest.approx(cramer_D(asym, UNIT_M, B), rel=1e-12)


def test_scan_minimum_is_isolated(asym):
    """Uniqueness probe: no second near-root anywhere in the scanned box."""
    grid = np.arange(-5.0, 0.0005, 0.01)
    g1, g2 = _g(grid[:, None], grid[None, :], asym, UNIT_M)
    err = np.maximum(np.abs(g1), np.abs(g2))
    B = np.array(solve_B(asym, UNIT_M))
    pts = np.argwhere(err < 0.1)
    dist = np.max(np.abs(np.stack([grid[pts[:, 0]], grid[pts[:, 1]]], 1) - B), axis=1)
    assert pts.size and np.all(dist < 0.1)


def test_bisection_fallback_agrees_with_newton(asym):
    for M in (UNIT_M, GrowthBound(0.3, 7.0), GrowthBound(40.0, 0.01)):
        assert np.allclose(_reduced_bisection(asym, M), solve_B(asym, M), rtol=0, atol=1e-12)


def test_random_battery_negative_and_consistent():
    rng = np.random.default_rng(20240501)
    radii = np.logspace(-2, 3, 300)
    for _ in range(20):
        p = random_params(rng)
        M = p.growth()
        co = build_coeffs(p, M)
        assert all(x < 0 for x in co.B + co.D)
        assert np.max(np.abs(b_residual(co.B, p, M))) <= 1e-10
        assert np.max(np.abs(d_residual(co.D, co.B, p, M))) <= 1e-10
        assert co.D == pytest.approx(cramer_D(p, M, co.B), rel=1e-10, abs=1e-12)
        rep = check_inequalities(co, p, M, radii)
        assert rep.passed, rep
        assert np.all(eval_sub(co, radii, 1) <= 1) and np.all(eval_sub(co, radii, 2) <= 1)


def test_doubling_M_makes_B_more_negative():
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = random_params(rng)
        M = p.growth()
        B = solve_B(p, M)
        B2 = solve_B(p, GrowthBound(2 * M.M1, 2 * M.M2))
        assert B2[0] <= B[0] and B2[1] <= B[1]
        oracle, _ = scan_oracle(p, GrowthBound(2 * M.M1, 2 * M.M2), box=max(5.0, -2 * min(B2)),
                                step=2e-3)
        assert np.allclose(B2, oracle, atol=1e-10)


def test_eval_sub_examples():
    co = SubCoeffs(-0.5, -0.5, -1.5, -1.5)
    assert eval_sub(co, 0.0, 1) == pytest.approx(math.exp(-1.5))
    assert eval_sub(co, 0.0, 1) == pytest.approx(0.22313, abs=1e-5)
    assert eval_sub(co, 2.0, 2) == pytest.approx(math.exp(-3.5))
    pair = BracketPair(co)
    r = np.linspace(0, 10, 50)
    assert np.all(pair.sub_u(r) > 0) and np.all(pair.sub_u(r) <= pair.super_u(r))
    assert np.all(pair.super_v(r) == 1)


def test_check_inequalities_examples(unit):
    co = build_coeffs(unit)
    assert check_inequalities(co, unit, UNIT_M, [0, 0.5, 1, 2, 5, 10]).passed
    assert check_inequalities(co, unit, UNIT_M, np.logspace(-2, 3, 400)).passed
    bad = SubCoeffs(0.5, co.B2, co.D1, co.D2)
    rep = check_inequalities(bad, unit, UNIT_M, [0, 0.5, 1, 2, 5, 10])
    assert not rep.passed and rep.worst_margin > 0 and rep.worst_r >= 5
    zero_f = ModelParams(cost=(CostCoeffs(0, 0, 0), CostCoeffs(0, 0, 0)))
    from regime_hjb.subsuper import super_margins
    sup = super_margins(zero_f, np.array([0.0, 1.0, 10.0]))
    assert np.all(sup[0] == 0) and np.all(sup[1] == 0)
    with pytest.raises(ValueError):
        check_inequalities(co, unit, UNIT_M, [])


def test_singular_matrix_signals_invalid_params():
    p = ModelParams(lambda1=-5.0, lambda2=1.0)  # bypasses validation; det = -36
    with pytest.raises(SingularMatrix):
        solve_D(p, UNIT_M, (-0.5, -0.5))
