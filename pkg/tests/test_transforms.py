import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from regime_hjb.errors import DomainError
from regime_hjb.model import ModelParams
from regime_hjb.transforms import (PointState, equivalence_check, generator_apply,
                                   hamiltonian_max, residual_original, residual_transformed,
                                   u_from_z, z_from_u)


def unit_state(x, regime=1):
    # z = (x^2 + 1)/2 in one dimension
    return PointState(x_norm=abs(x), value=(x * x + 1) / 2, grad_norm_sq=x * x, laplacian=1.0,
                      regime=regime)


def test_z_from_u_examples():
    assert z_from_u(1.0, 5.0) == 0.0
    assert z_from_u(math.exp(-1), 2.0) == pytest.approx(2.0, rel=1e-15)
    assert z_from_u(math.exp(-0.5), 1.0) == pytest.approx(0.5, rel=1e-15)


def test_z_from_u_clamp_and_domain():
    assert z_from_u(1 + 5e-13, 1.0) == 0.0
    for bad in (0.0, -1.0, 1 + 1e-9):
        with pytest.raises(DomainError):
            z_from_u(bad, 1.0)


def test_u_from_z_examples():
    assert u_from_z(0.0, 3.0) == 1.0
    assert u_from_z(2.0, 2.0) == pytest.approx(math.exp(-1), rel=1e-15)
    with pytest.raises(DomainError):
        u_from_z(-0.1, 1.0)


@pytest.mark.parametrize("z", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("k", [0.5, 1.0, 2.0])
def test_round_trip_examples(z, k):
    assert z_from_u(u_from_z(z, k), k) == pytest.approx(z, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-300, 1.0), st.floats(0.01, 100))
def test_round_trip_u(u, k):
    assert u_from_z(z_from_u(u, k), k) == pytest.approx(u, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 500.0), st.floats(0.01, 100))
def test_round_trip_z(z, k):
    assume(z / k < 700)  # keep u a normal double
    # u = exp(-z/k) sits next to 1 for tiny z/k, so only ~eps*k absolute accuracy survives
    eps = np.finfo(float).eps
    assert z_from_u(u_from_z(z, k), k) == pytest.approx(z, rel=1e-12, abs=2 * eps * k)


@pytest.mark.parametrize("x", [0.0, 0.7, 2.0])
def test_original_residual_unit_closed_form(x):
    r = residual_original(unit_state(x, 1), unit_state(x, 2), ModelParams(), (x * x, x * x))
    assert r == pytest.approx((0.0, 0.0), abs=1e-12)


def test_original_residual_trivial_cases():
    zero = PointState(0.0, 0.0, 0.0, 0.0)
    assert residual_original(zero, zero, ModelParams(), (0, 0)) == (0.0, 0.0)
    assert residual_original(zero, zero, ModelParams(), (1, 1)) == (-1.0, -1.0)


@pytest.mark.parametrize("x", [0.0, 1.0])
def test_transformed_residual_unit_closed_form(x):
    u = math.exp(-0.5 * (x * x + 1))
    lap = u * (x * x - 1)  # one dimension
    r = residual_transformed(u, u, lap, lap, ModelParams(), (x * x, x * x))
    assert r == pytest.approx((0.0, 0.0), abs=1e-12)


def test_transformed_residual_trivial_cases():
    p = ModelParams(k1=0.5, k2=2.0, a1=0.3, a2=4.0, lambda1=2.0, lambda2=0.1)
    assert residual_transformed(1.0, 1.0, 0.0, 0.0, p, (0, 0)) == (0.0, 0.0)
    c = 3.0
    assert residual_transformed(1.0, 1.0, 0.0, 0.0, p, (c, c)) == pytest.approx(
        (-2 * c / 0.25, -2 * c / 4.0))
    with pytest.raises(DomainError):
        residual_transformed(0.0, 1.0, 0.0, 0.0, p, (0, 0))


def test_equivalence_examples():
    p = ModelParams()
    assert equivalence_check(unit_state(1.0), unit_state(1.0, 2), p, (1.0, 1.0))
    s = unit_state(1.0)
    bumped = PointState(s.x_norm, s.value + 0.1, s.grad_norm_sq, s.laplacian)
    r = residual_original(bumped, unit_state(1.0, 2), p, (1.0, 1.0))
    assert abs(r[0]) > 0.05 and abs(r[1]) > 0.05
    assert equivalence_check(bumped, unit_state(1.0, 2), p, (1.0, 1.0))
    zero = PointState(0.0, 0.0, 0.0, 0.0)
    assert equivalence_check(zero, zero, p, (0.0, 0.0))


@settings(max_examples=150, deadline=None)
@given(st.floats(0.2, 3), st.floats(0.2, 3), st.floats(0.1, 3), st.floats(0.1, 3),
       st.floats(0.1, 3), st.floats(0.1, 3), st.integers(1, 4),
       st.floats(0.05, 2), st.floats(0.05, 2), st.floats(0, 3), st.floats(0, 3))
def test_equivalence_random_quadratic_fields(k1, k2, a1, a2, l1, l2, N, s1, s2, x, f0):
    """z_i = s_i (r^2 + c_i): residuals map by the factor 2u/k^2 exactly."""
    p = ModelParams(dim=N, k1=k1, k2=k2, a1=a1, a2=a2, lambda1=l1, lambda2=l2)
    states = [PointState(x, s * (x * x + 1), (2 * s * x) ** 2, 2 * N * s, i + 1)
              for i, s in enumerate((s1, s2))]
    f = (f0 + x * x, f0)
    assert equivalence_check(states[0], states[1], p, f, tol=1e-9)
    r_o = residual_original(states[0], states[1], p, f)
    u = math.exp(-states[0].value / k1)
    lap_u = u * (states[0].grad_norm_sq / k1**2 - states[0].laplacian / k1)
    v = math.exp(-states[1].value / k2)
    lap_v = v * (states[1].grad_norm_sq / k2**2 - states[1].laplacian / k2)
    r_t = residual_transformed(u, v, lap_u, lap_v, p, f)
    assert r_t[0] == pytest.approx(2 * u / k1**2 * r_o[0], rel=1e-9, abs=1e-12)
    assert r_t[1] == pytest.approx(2 * v / k2**2 * r_o[1], rel=1e-9, abs=1e-12)


def test_generator_examples():
    p = ModelParams(a1=0.7, a2=1.9)
    assert generator_apply((3.0, 3.0), [0.0], 0.0, [0.0], p, 1) == 0.0
    # v = |x|^2 in both regimes at x = 0.4: grad 0.8, laplacian 2
    assert generator_apply((0.16, 0.16), [0.8], 2.0, [0.0], p, 2) == pytest.approx(1.0)
    assert generator_apply((1.0, 0.0), [0.0], 0.0, [0.0], p, 1) == pytest.approx(-0.7)
    with pytest.raises(ValueError):
        generator_apply((1.0, 0.0), [0.0], 0.0, [0.0], p, 3)


def test_generator_linear_and_affine_in_control():
    rng = np.random.default_rng(3)
    p = ModelParams(dim=3, k1=0.4, k2=1.7, a1=0.2, a2=2.5)
    for _ in range(50):
        vals, g, lap = rng.normal(size=2), rng.normal(size=3), rng.normal()
        vals2, g2, lap2 = rng.normal(size=2), rng.normal(size=3), rng.normal()
        c, c2 = rng.normal(size=3), rng.normal(size=3)
        a, b = rng.normal(size=2)
        for reg in (1, 2):
            lhs = generator_apply(a * vals + b * vals2, a * g + b * g2, a * lap + b * lap2, c, p, reg)
            rhs = a * generator_apply(vals, g, lap, c, p, reg) + b * generator_apply(vals2, g2, lap2, c, p, reg)
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
            d = generator_apply(vals, g, lap, c + c2, p, reg) - generator_apply(vals, g, lap, c, p, reg)
            assert d == pytest.approx(float(c2 @ g), rel=1e-10, abs=1e-10)


def test_hamiltonian_examples():
    c, val = hamiltonian_max([0.0, 0.0])
    assert np.all(c == 0) and val == 0.0
    c, val = hamiltonian_max([3.0, 4.0])
    assert np.all(c == [3.0, 4.0]) and val == 12.5


def test_hamiltonian_strict_max():
    rng = np.random.default_rng(11)
    g = rng.normal(size=4)
    c_star, best = hamiltonian_max(g)
    for _ in range(100):
        c = c_star + rng.normal(size=4) * rng.uniform(1e-3, 3)
        assert g @ c - 0.5 * c @ c < best


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3),
       st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_hamiltonian_bound(g, c):
    g, c = np.array(g), np.array(c)
    _, best = hamiltonian_max(g)
    assert g @ c - 0.5 * c @ c <= best + 1e-9 * (1 + best)
