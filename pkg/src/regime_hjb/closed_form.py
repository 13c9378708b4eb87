"""Quadratic closed-form solution for ``f_1 = f_2 = |x|^2`` under the special
discount rates of :func:`regime_hjb.model.special_lambda`.

    u = exp(m_1 (|x|^2 + 1)),  v = exp(m_2 (|x|^2 + 1)),
    m_i = -(sqrt(N^2 k_i^2 + 8) - N k_i) / (4 k_i),
    z_i = -k_i m_i (|x|^2 + 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CostCoeffs, ModelParams, special_lambda
from .transforms import PointState, residual_original

QUADRATIC_COST = CostCoeffs(p=1.0, s=0.0, q=0.0)


@dataclass(frozen=True)
class ClosedForm:
    dim: int
    k1: float
    k2: float
    a1: float
    a2: float
    m1: float
    m2: float
    lambda1: float
    lambda2: float

    @property
    def m(self):
        return (self.m1, self.m2)

    @property
    def slope(self):
        """alpha_i with z_i = alpha_i (r^2 + 1)."""
        return (-self.k1 * self.m1, -self.k2 * self.m2)

    def params(self) -> ModelParams:
        return ModelParams(dim=self.dim, k1=self.k1, k2=self.k2, a1=self.a1, a2=self.a2,
                           lambda1=self.lambda1, lambda2=self.lambda2,
                           cost=(QUADRATIC_COST, QUADRATIC_COST))

    def u(self, r, regime=1):
        m = self.m[regime - 1]
        return np.exp(m * (np.asarray(r, float) ** 2 + 1))

    def z(self, r, regime=1):
        return self.slope[regime - 1] * (np.asarray(r, float) ** 2 + 1)

    def dz(self, r, regime=1):
        return 2 * self.slope[regime - 1] * np.asarray(r, float)

    def d2z(self, r, regime=1):
        return 2 * self.slope[regime - 1] * np.ones_like(np.asarray(r, float))

    def lap_z(self, r, regime=1):
        return 2 * self.dim * self.slope[regime - 1] * np.ones_like(np.asarray(r, float))

    def du(self, r, regime=1):
        r = np.asarray(r, float)
        return 2 * self.m[regime - 1] * r * self.u(r, regime)

    def lap_u(self, r, regime=1):
        """Laplacian of exp(m(r^2+1)) in R^N: (4 m^2 r^2 + 2 m N) u."""
        r = np.asarray(r, float)
        m = self.m[regime - 1]
        return (4 * m**2 * r**2 + 2 * m * self.dim) * self.u(r, regime)

    def point_state(self, r, regime):
        return PointState(x_norm=r, value=float(self.z(r, regime)),
                          grad_norm_sq=float(self.dz(r, regime)) ** 2,
                          laplacian=float(self.lap_z(r, regime)), regime=regime)


def build_closed_form(N, k1, k2, a1, a2) -> ClosedForm:
    lam1, lam2 = special_lambda(N, k1, k2, a1, a2)
    m1 = -(math.sqrt(N**2 * k1**2 + 8) - N * k1) / (4 * k1)
    m2 = -(math.sqrt(N**2 * k2**2 + 8) - N * k2) / (4 * k2)
    return ClosedForm(dim=N, k1=k1, k2=k2, a1=a1, a2=a2, m1=m1, m2=m2,
                      lambda1=lam1, lambda2=lam2)


def closed_form_for(params: ModelParams) -> ClosedForm | None:
    """The closed form when ``params`` matches its assumptions, else None."""
    if params.cost != (QUADRATIC_COST, QUADRATIC_COST):
        return None
    try:
        cf = build_closed_form(params.dim, params.k1, params.k2, params.a1, params.a2)
    except ValueError:
        return None
    if not (math.isclose(cf.lambda1, params.lambda1, rel_tol=1e-12)
            and math.isclose(cf.lambda2, params.lambda2, rel_tol=1e-12)):
        return None
    return cf


def verify_identity(cf: ClosedForm, params: ModelParams, sample_radii) -> float:
    """Max |residual| of the value-function system for the analytic solution."""
    worst = 0.0
    for r in np.asarray(sample_radii, dtype=float):
        f = (float(params.cost[0](r)), float(params.cost[1](r)))
        res = residual_original(cf.point_state(r, 1), cf.point_state(r, 2), params, f)
        worst = max(worst, abs(res[0]), abs(res[1]))
    return worst
