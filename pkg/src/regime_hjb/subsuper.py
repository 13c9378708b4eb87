"""Explicit sub-solution ``(exp(B_1|x|^2 + D_1), exp(B_2|x|^2 + D_2))`` and the
constant super-solution ``(1, 1)`` of the transformed system.

Matching powers of |x|^2 in the sub-solution inequality with ``f_i`` replaced
by its envelope ``M_i(|x|^2 + 1)`` gives a coupled quadratic system for B and a
2x2 linear system for D.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NoConvergence, PositiveRoot, SingularMatrix
from .model import GrowthBound, ModelParams, eval_cost

NEWTON_MAX_ITERS = 200
INEQ_SLACK = 1e-9


@dataclass(frozen=True)
class SubCoeffs:
    B1: float
    B2: float
    D1: float
    D2: float
    degenerate: bool = False

    @property
    def B(self):
        return (self.B1, self.B2)

    @property
    def D(self):
        return (self.D1, self.D2)


@dataclass(frozen=True)
class BracketPair:
    coeffs: SubCoeffs

    def sub_u(self, r):
        return eval_sub(self.coeffs, r, 1)

    def sub_v(self, r):
        return eval_sub(self.coeffs, r, 2)

    @staticmethod
    def super_u(r):
        return np.ones_like(np.asarray(r, dtype=float))

    super_v = super_u


@dataclass(frozen=True)
class InequalityReport:
    passed: bool
    worst_margin: float
    worst_r: float


def coupling_matrix(params: ModelParams):
    """Matrix shared by the B and D systems; its determinant is
    4 (l1 l2 + l1 a2 + l2 a1) / (k1 k2) > 0."""
    k1, k2 = params.k
    a1, a2 = params.a
    l1, l2 = params.lam
    return np.array([[2 * (l1 + a1) / k1, -2 * a1 * k2 / k1**2],
                     [-2 * a2 * k1 / k2**2, 2 * (l2 + a2) / k2]])


def b_residual(B, params: ModelParams, M: GrowthBound):
    """Residual of ``-4 B_i^2 + 2 M_i / k_i^2 + (A B)_i = 0``."""
    B = np.asarray(B, dtype=float)
    k = np.array(params.k)
    return -4 * B**2 + 2 * np.array(M.M) / k**2 + coupling_matrix(params) @ B


def d_residual(D, B, params: ModelParams, M: GrowthBound):
    D, B = np.asarray(D, dtype=float), np.asarray(B, dtype=float)
    k = np.array(params.k)
    return -2 * params.dim * B + 2 * np.array(M.M) / k**2 + coupling_matrix(params) @ D


def _newton(params, M, B0):
    A = coupling_matrix(params)
    B = np.array(B0, dtype=float)
    G = b_residual(B, params, M)
    scale = 1.0 + np.abs(A).max() + max(M.M)
    for it in range(NEWTON_MAX_ITERS):
        if np.abs(G).max() <= 1e-15 * scale:
            return B, G, True
        J = A - 8 * np.diag(B)
        try:
            step = np.linalg.solve(J, -G)
        except np.linalg.LinAlgError:
            return B, G, False
        t, norm0 = 1.0, np.linalg.norm(G)
        while t > 1e-8:
            trial = B + t * step
            Gt = b_residual(trial, params, M)
            if np.linalg.norm(Gt) < (1 - 1e-4 * t) * norm0:
                break
            t *= 0.5
        if np.any(trial > 0):
            return trial, Gt, False
        if np.abs(trial - B).max() <= 1e-16 * (1 + np.abs(B).max()):
            return trial, Gt, np.abs(Gt).max() <= 1e-10
        B, G = trial, Gt
    return B, G, np.abs(G).max() <= 1e-10


def _reduced_bisection(params, M):
    """Eliminate B2 through the negative root of its own quadratic, then
    bracket B1 on the negative half-line."""
    k1, k2 = params.k
    a1, a2 = params.a
    l1, l2 = params.lam
    b2 = 2 * (l2 + a2) / k2

    def phi2(B1):
        c2 = 2 * M.M2 / k2**2 - 2 * a2 * k1 * B1 / k2**2
        return (b2 - math.sqrt(b2**2 + 16 * c2)) / 8

    def g(B1):
        return b_residual((B1, phi2(B1)), params, M)[0]

    lo = -1.0
    while g(lo) >= 0:
        lo *= 2
        if lo < -1e12:
            raise NoConvergence(f"no sign change for B1 down to {lo:g}")
    if g(0.0) <= 0:
        raise NoConvergence("reduced residual is not positive at B1 = 0")
    B1 = brentq(g, lo, 0.0, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=NEWTON_MAX_ITERS)
    return np.array([B1, phi2(B1)])


def solve_B(params: ModelParams, M: GrowthBound):
    """Unique nonpositive root (B1, B2) of the quadratic coefficient system."""
    if M.M1 == 0 and M.M2 == 0:
        return (0.0, 0.0)
    guess = (-math.sqrt(M.M1) / params.k1, -math.sqrt(M.M2) / params.k2)
    B, G, ok = _newton(params, M, guess)
    if not ok or np.any(B >= 0):
        B = _reduced_bisection(params, M)
        G = b_residual(B, params, M)
    res = np.abs(G).max()
    if res > 1e-10:
        raise NoConvergence(f"B system residual {res:.3e} after {NEWTON_MAX_ITERS} iterations")
    if np.any(B > 0):
        raise PositiveRoot(f"root {B} is not in the nonpositive quadrant")
    return float(B[0]), float(B[1])


def solve_D(params: ModelParams, M: GrowthBound, B):
    A = coupling_matrix(params)
    det = np.linalg.det(A)
    if not det > 0:
        raise SingularMatrix(f"coupling determinant {det:g} is not positive")
    k = np.array(params.k)
    rhs = 2 * params.dim * np.asarray(B, float) - 2 * np.array(M.M) / k**2
    D = np.linalg.solve(A, rhs)
    return float(D[0]), float(D[1])


def build_coeffs(params: ModelParams, M: GrowthBound | None = None) -> SubCoeffs:
    M = params.growth() if M is None else M
    if M.M1 == 0 and M.M2 == 0:
        return SubCoeffs(0.0, 0.0, 0.0, 0.0, degenerate=True)
    B = solve_B(params, M)
    D = solve_D(params, M, B)
    return SubCoeffs(B[0], B[1], D[0], D[1])


def eval_sub(coeffs: SubCoeffs, r, regime: int):
    B, D = (coeffs.B1, coeffs.D1) if regime == 1 else (coeffs.B2, coeffs.D2)
    r = np.asarray(r, dtype=float)
    out = np.exp(B * r**2 + D)
    return float(out) if out.ndim == 0 else out


def sub_margins(coeffs: SubCoeffs, params: ModelParams, M: GrowthBound, r):
    """Sub-solution inequality ``-lap u + u[...] - 2 a k_j/k_i^2 u ln v``
    divided by ``u (1 + r^2)``; must be <= 0.

    Uses the analytic Laplacian ``(4 B^2 r^2 + 2 B N) u`` and the growth
    envelope in place of f.
    """
    r = np.asarray(r, dtype=float)
    N = params.dim
    out = []
    for i in (0, 1):
        j = 1 - i
        k, kj, a, lam = params.k[i], params.k[j], params.a[i], params.lam[i]
        B, D = coeffs.B[i], coeffs.D[i]
        Bj, Dj = coeffs.B[j], coeffs.D[j]
        lin = B * r**2 + D
        m = (-(4 * B**2 * r**2 + 2 * B * N)
             + (2 / k**2) * (M.M[i] * (r**2 + 1) + (lam + a) * k * lin)
             - 2 * a * kj / k**2 * (Bj * r**2 + Dj))
        out.append(m / (1 + r**2))
    return out


def super_margins(params: ModelParams, r):
    """Super-solution inequality at (1, 1) divided by ``1 + r^2``; must be >= 0."""
    r = np.asarray(r, dtype=float)
    return [(2 / params.k[i] ** 2) * eval_cost(params.cost[i], r) / (1 + r**2) for i in (0, 1)]


def check_inequalities(coeffs: SubCoeffs, params: ModelParams, M: GrowthBound,
                       sample_radii) -> InequalityReport:
    r = np.asarray(sample_radii, dtype=float)
    if r.size == 0:
        raise ValueError("sample_radii must be nonempty")
    sub = sub_margins(coeffs, params, M, r)
    sup = super_margins(params, r)
    order = [(coeffs.B[i] * r**2 + coeffs.D[i]) / (1 + r**2) for i in (0, 1)]
    # positive entries are violations
    viol = np.max(np.vstack([sub[0], sub[1], -sup[0], -sup[1], order[0], order[1]]), axis=0)
    idx = int(np.argmax(viol))
    worst = float(viol[idx])
    return InequalityReport(passed=worst <= INEQ_SLACK, worst_margin=worst, worst_r=float(r[idx]))
