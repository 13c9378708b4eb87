"""Problem data for the two-regime control problem.

Each regime i in {1, 2} carries a volatility constant ``k_i``, a switching
rate ``a_i``, a discount rate ``lambda_i`` and a radial running cost
``f_i(x) = p|x|^2 + s|x| + q``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveLambda, ParamError

M_FLOOR = 1e-12


@dataclass(frozen=True)
class CostCoeffs:
    p: float = 1.0
    s: float = 0.0
    q: float = 0.0

    def __call__(self, r):
        return eval_cost(self, r)


@dataclass(frozen=True)
class GrowthBound:
    M1: float
    M2: float

    @property
    def M(self):
        return (self.M1, self.M2)


@dataclass(frozen=True)
class ModelParams:
    dim: int = 1
    k1: float = 1.0
    k2: float = 1.0
    a1: float = 1.0
    a2: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    cost: tuple[CostCoeffs, CostCoeffs] = field(
        default_factory=lambda: (CostCoeffs(), CostCoeffs()))

    @property
    def k(self):
        return (self.k1, self.k2)

    @property
    def a(self):
        return (self.a1, self.a2)

    @property
    def lam(self):
        return (self.lambda1, self.lambda2)

    def growth(self) -> GrowthBound:
        return GrowthBound(growth_bound(self.cost[0]), growth_bound(self.cost[1]))


def validate_params(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged, or raise :class:`ParamError` naming the
    first violated constraint."""
    if int(params.dim) != params.dim or params.dim < 1:
        raise ParamError("dim must be an integer >= 1")
    for name in ("k1", "k2", "a1", "a2", "lambda1", "lambda2"):
        value = getattr(params, name)
        if not (math.isfinite(value) and value > 0):
            raise ParamError(f"{name} must be > 0")
    if len(params.cost) != 2:
        raise ParamError("cost must hold exactly two entries")
    for i, c in enumerate(params.cost, start=1):
        for name in ("p", "s", "q"):
            value = getattr(c, name)
            if not (math.isfinite(value) and value >= 0):
                raise ParamError(f"cost{i}.{name} must be >= 0")
    return params


def growth_bound(cost: CostCoeffs) -> float:
    """Constant M with ``p r^2 + s r + q <= M (r^2 + 1)`` for all r >= 0.

    Uses ``s r <= s (r^2 + 1) / 2``.
    """
    M = max(cost.p + cost.s / 2, cost.q + cost.s / 2)
    return M if M > 0 else M_FLOOR


def eval_cost(cost: CostCoeffs, r):
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("radius must be nonnegative")
    out = cost.p * r_arr**2 + cost.s * r_arr + cost.q
    return float(out) if out.ndim == 0 else out


def special_lambda(N, k1, k2, a1, a2):
    """Discount rates for which ``f_1 = f_2 = |x|^2`` admits the quadratic
    closed-form solution."""
    g1 = math.sqrt(N**2 * k1**2 + 8) - N * k1
    g2 = math.sqrt(N**2 * k2**2 + 8) - N * k2
    lam1 = -a1 + N * k1 + a1 * g1 * g2 / 8 + N * a1 * k1 * g2 / 4
    lam2 = -a2 + N * k2 + a2 * g1 * g2 / 8 + N * a2 * k2 * g1 / 4
    if lam1 <= 0:
        raise NonPositiveLambda(f"lambda1 = {lam1:.6g} is not positive")
    if lam2 <= 0:
        raise NonPositiveLambda(f"lambda2 = {lam2:.6g} is not positive")
    return lam1, lam2
