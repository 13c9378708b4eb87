"""Pointwise changes of variables and residuals.

The value-function system

    -(k_i/2) lap z_i + |grad z_i|^2 / 2 = f_i - (lambda_i + a_i) z_i + a_i z_j

becomes, with ``u = exp(-z_1/k_1)`` and ``v = exp(-z_2/k_2)``, the semilinear
system

    lap u = u (2/k_1^2) (f_1 + (lambda_1 + a_1) k_1 ln u - a_1 k_2 ln v)

(and symmetrically for v).  Both residuals are computed from pointwise
semantic data so closed forms and grids can feed them alike.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import ModelParams

CLAMP_GUARD = 1e-12


@dataclass(frozen=True)
class PointState:
    x_norm: float
    value: float
    grad_norm_sq: float
    laplacian: float
    regime: int = 1

    def __post_init__(self):
        if self.grad_norm_sq < 0:
            raise ValueError("grad_norm_sq must be >= 0")


def z_from_u(u_value, k):
    u = np.asarray(u_value, dtype=float)
    if np.any(u <= 0) or np.any(u > 1 + CLAMP_GUARD):
        raise DomainError("u must lie in (0, 1]")
    z = -k * np.log(np.minimum(u, 1.0))
    z = z + 0.0  # turn -0.0 into 0.0
    return float(z) if z.ndim == 0 else z


def u_from_z(z_value, k):
    z = np.asarray(z_value, dtype=float)
    if np.any(z < 0):
        raise DomainError("z must be >= 0")
    u = np.exp(-z / k)
    return float(u) if u.ndim == 0 else u


def residual_original(state1: PointState, state2: PointState, params: ModelParams, f_values):
    """LHS - RHS of both value-function equations at one point."""
    out = []
    for i, (s, o) in enumerate(((state1, state2), (state2, state1))):
        k, a, lam = params.k[i], params.a[i], params.lam[i]
        r = (-0.5 * k * s.laplacian + 0.5 * s.grad_norm_sq - f_values[i]
             + (lam + a) * s.value - a * o.value)
        out.append(r)
    return tuple(out)


def semilinear_rhs(u, v, params: ModelParams, f_values):
    """Right-hand sides F_1(u, v), F_2(u, v) of the transformed system."""
    k1, k2 = params.k
    a1, a2 = params.a
    l1, l2 = params.lam
    lu, lv = np.log(u), np.log(v)
    F1 = u * (2 / k1**2) * (f_values[0] + (l1 + a1) * k1 * lu - a1 * k2 * lv)
    F2 = v * (2 / k2**2) * (f_values[1] + (l2 + a2) * k2 * lv - a2 * k1 * lu)
    return F1, F2


def residual_transformed(u, v, lap_u, lap_v, params: ModelParams, f_values):
    if u <= 0 or v <= 0:
        raise DomainError("u and v must be positive")
    F1, F2 = semilinear_rhs(u, v, params, f_values)
    return (lap_u - F1, lap_v - F2)


def _to_u_data(state: PointState, k):
    # lap e^{-w} = e^{-w} (|grad w|^2 - lap w), with w = z/k
    u = math.exp(-state.value / k)
    lap_u = u * (state.grad_norm_sq / k**2 - state.laplacian / k)
    return u, lap_u


def equivalence_check(state1: PointState, state2: PointState, params: ModelParams,
                      f_values, tol=1e-10) -> bool:
    """Check that the transformed residual is the original one times ``2u/k^2``.

    This makes "one vanishes iff the other does" exact at the mapped point.
    """
    r_orig = residual_original(state1, state2, params, f_values)
    u, lap_u = _to_u_data(state1, params.k1)
    v, lap_v = _to_u_data(state2, params.k2)
    r_tr = residual_transformed(u, v, lap_u, lap_v, params, f_values)
    for i, w in enumerate((u, v)):
        back = r_tr[i] * params.k[i] ** 2 / (2 * w)
        if abs(back - r_orig[i]) > tol * max(1.0, abs(r_orig[i])):
            return False
        if (abs(r_orig[i]) <= tol) != (abs(back) <= tol):
            return False
    return True


def generator_apply(values, grad, laplacian, control, params: ModelParams, regime: int):
    """Regime-switching generator applied to v(., regime) at a point.

    ``values`` is the pair (v(x,1), v(x,2)); ``grad`` and ``laplacian`` belong
    to v(x, regime).
    """
    if regime not in (1, 2):
        raise ValueError("regime must be 1 or 2")
    i, j = regime - 1, 2 - regime
    a = params.a[i]
    drift = float(np.dot(np.asarray(control, float), np.asarray(grad, float)))
    return 0.5 * params.k[i] * laplacian + drift - a * values[i] + a * values[j]


def hamiltonian_max(grad_u):
    """Maximizer and maximum of ``c -> grad_u . c - |c|^2/2``."""
    g = np.asarray(grad_u, dtype=float)
    return g.copy(), 0.5 * float(g @ g)
