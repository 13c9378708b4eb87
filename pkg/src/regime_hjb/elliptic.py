"""Radial finite differences for the transformed system on balls ``|x| <= R``.

Unknowns live on nodes ``r_j = j h``, ``j = 0..n``, with Dirichlet data from
the sub-solution at ``r_n = R`` and the symmetry condition at the origin.  The
discrete system is solved by shifted monotone (Picard) iteration: each sweep
solves the tridiagonal problem

    (lap_h - K) u_new = F_1(u_old, v_old) - K u_old

with a nodewise shift K bounding dF_1/du over the sub/super bracket, so the
sequence stays ordered between the sub- and super-solution.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import BracketViolation, DomainError, NoConvergence
from .model import GrowthBound, ModelParams, eval_cost
from .subsuper import SubCoeffs, eval_sub
from .transforms import CLAMP_GUARD, semilinear_rhs

log = logging.getLogger(__name__)

FROM_SUB = "from_sub"
FROM_SUPER = "from_super"


@dataclass(frozen=True)
class RadialGrid:
    R: float
    n: int

    def __post_init__(self):
        if not (self.R > 0 and self.n >= 1):
            raise ValueError("need R > 0 and n >= 1")

    @classmethod
    def from_spacing(cls, R, h):
        n = int(round(R / h))
        if n < 1 or abs(n * h - R) > 1e-9 * R:
            raise ValueError(f"R={R} is not an integer multiple of h={h}")
        return cls(float(R), n)

    @property
    def h(self):
        return self.R / self.n

    @property
    def r(self):
        return np.arange(self.n + 1) * self.h


@dataclass
class FieldPair:
    u: np.ndarray
    v: np.ndarray
    grid: RadialGrid


@dataclass
class SolveReport:
    iterations: int = 0
    final_update_norm: float = float("inf")
    residual_inf: float = float("nan")
    bracket_ok: bool = True
    monotone_ok: bool = True
    converged: bool = False
    direction: str = FROM_SUB
    # worst signed excursions seen over all sweeps (negative means inside)
    bracket_worst: float = -float("inf")
    monotone_worst: float = -float("inf")

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class ValueField:
    grid: RadialGrid
    z1: np.ndarray
    z2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    K1: float
    K2: float
    gradient_slope: tuple = field(default=(float("nan"), float("nan")))

    @property
    def r(self):
        return self.grid.r


@dataclass(frozen=True)
class ConvexityReport:
    passed: bool
    min_second_derivative: float
    min_slope: float


@dataclass
class ExpansionStep:
    R: float
    fields: FieldPair
    report: SolveReport
    gap: float | None = None  # max-norm gap to the previous ball on the window
    window: float | None = None


def radial_laplacian(field, grid: RadialGrid, j: int, dim: int) -> float:
    """Second-order radial Laplacian ``u'' + (N-1)/r u'`` at an interior node.

    At the origin uses the symmetric limit ``2N (u_1 - u_0) / h^2``.
    """
    if not 0 <= j <= grid.n - 1:
        raise IndexError(f"node {j} is not interior (0..{grid.n - 1})")
    h = grid.h
    u = np.asarray(field, dtype=float)
    if j == 0:
        return 2 * dim * (u[1] - u[0]) / h**2
    r = j * h
    return ((u[j + 1] - 2 * u[j] + u[j - 1]) / h**2
            + (dim - 1) / r * (u[j + 1] - u[j - 1]) / (2 * h))


def laplacian_interior(field, grid: RadialGrid, dim: int) -> np.ndarray:
    """Vectorized :func:`radial_laplacian` over nodes 0..n-1."""
    u = np.asarray(field, dtype=float)
    h = grid.h
    out = np.empty(grid.n)
    out[0] = 2 * dim * (u[1] - u[0]) / h**2
    r = grid.r[1:-1]
    out[1:] = ((u[2:] - 2 * u[1:-1] + u[:-2]) / h**2
               + (dim - 1) / r * (u[2:] - u[:-2]) / (2 * h))
    return out


def _banded_operator(grid: RadialGrid, dim: int, shift: np.ndarray):
    """Banded storage of (lap_h - diag(shift)) on nodes 0..n-1, plus the
    coefficient multiplying the Dirichlet value in the last row."""
    n, h = grid.n, grid.h
    r = grid.r[:n]
    ab = np.zeros((3, n))
    lower = np.empty(n)
    upper = np.empty(n)
    diag = np.empty(n)
    diag[0] = -2 * dim / h**2
    upper[0] = 2 * dim / h**2
    lower[0] = 0.0
    rr = r[1:]
    diag[1:] = -2 / h**2
    lower[1:] = 1 / h**2 - (dim - 1) / (2 * rr * h)
    upper[1:] = 1 / h**2 + (dim - 1) / (2 * rr * h)
    if np.any(lower[1:] < 0):
        log.warning("radial stencil loses the M-matrix sign pattern near r=0 (dim=%d)", dim)
    diag = diag - shift
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return ab, upper[-1]


def shift_bounds(params: ModelParams, coeffs: SubCoeffs, r, f1, f2):
    """Nodewise upper bounds of dF_i/du_i over the bracket [sub, 1].

    dF_1/du = (2/k_1^2)(f_1 + (l_1+a_1) k_1 (ln u + 1) - a_1 k_2 ln v) is
    largest at ln u = 0 and ln v = B_2 r^2 + D_2.
    """
    k1, k2 = params.k
    a1, a2 = params.a
    l1, l2 = params.lam
    K1 = (2 / k1**2) * (f1 + (l1 + a1) * k1 - a1 * k2 * (coeffs.B2 * r**2 + coeffs.D2))
    K2 = (2 / k2**2) * (f2 + (l2 + a2) * k2 - a2 * k1 * (coeffs.B1 * r**2 + coeffs.D1))
    return np.maximum(K1, 0.0), np.maximum(K2, 0.0)


def solve_ball(params: ModelParams, M: GrowthBound, coeffs: SubCoeffs, grid: RadialGrid,
               tol=1e-10, max_iters=5000, direction=FROM_SUB, boundary="sub"):
    """Monotone iteration for the Dirichlet problem on the ball of radius ``grid.R``.

    ``direction`` picks the starting iterate (sub-solution or the constant 1);
    ``boundary`` picks the Dirichlet data (``"sub"`` for the ball problem,
    ``"super"`` for the constant-1 variant).  Returns ``(FieldPair, SolveReport)``.
    """
    if direction not in (FROM_SUB, FROM_SUPER):
        raise ValueError(f"unknown direction {direction!r}")
    if boundary not in ("sub", "super"):
        raise ValueError(f"unknown boundary {boundary!r}")
    r = grid.r
    n = grid.n
    report = SolveReport(direction=direction)
    if coeffs.degenerate:
        ones = np.ones(n + 1)
        report.iterations, report.final_update_norm, report.converged = 0, 0.0, True
        report.residual_inf = 0.0
        return FieldPair(ones, ones.copy(), grid), report

    f1 = eval_cost(params.cost[0], r)
    f2 = eval_cost(params.cost[1], r)
    lo_u = eval_sub(coeffs, r, 1)
    lo_v = eval_sub(coeffs, r, 2)
    K1, K2 = shift_bounds(params, coeffs, r, f1, f2)
    ab1, c_bc1 = _banded_operator(grid, params.dim, K1[:n])
    ab2, c_bc2 = _banded_operator(grid, params.dim, K2[:n])

    if direction == FROM_SUB:
        u, v = lo_u.copy(), lo_v.copy()
    else:
        u, v = np.ones(n + 1), np.ones(n + 1)
    if boundary == "sub":
        u[n], v[n] = lo_u[n], lo_v[n]
    else:
        u[n], v[n] = 1.0, 1.0
    sign = 1.0 if direction == FROM_SUB else -1.0

    def sweep(w, ab, c_bc, K, F, lo, name):
        rhs = F[:n] - K[:n] * w[:n]
        rhs[-1] -= c_bc * w[n]
        new = w.copy()
        new[:n] = solve_banded((1, 1), ab, rhs)
        excursion = max(float(np.max(lo - new)), float(np.max(new - 1.0)))
        report.bracket_worst = max(report.bracket_worst, excursion)
        if excursion > CLAMP_GUARD:
            report.bracket_ok = False
            raise BracketViolation(
                f"{name} left [sub, 1] by {excursion:.3e} at sweep {report.iterations}",
                report=report, fields=FieldPair(u, v, grid))
        np.clip(new, lo, 1.0, out=new)
        back = float(np.max(sign * (w - new)))
        report.monotone_worst = max(report.monotone_worst, back)
        if back > CLAMP_GUARD:
            report.monotone_ok = False
        return new

    for it in range(1, max_iters + 1):
        report.iterations = it
        F1, _ = semilinear_rhs(u, v, params, (f1, f2))
        u_new = sweep(u, ab1, c_bc1, K1, F1, lo_u, "u")
        _, F2 = semilinear_rhs(u_new, v, params, (f1, f2))
        v_new = sweep(v, ab2, c_bc2, K2, F2, lo_v, "v")
        upd = max(float(np.max(np.abs(u_new - u))), float(np.max(np.abs(v_new - v))))
        u, v = u_new, v_new
        report.final_update_norm = upd
        if upd <= tol:
            report.converged = report.bracket_ok and report.monotone_ok
            break
    fields = FieldPair(u, v, grid)
    report.residual_inf = discrete_residual(fields, params)
    if not report.converged:
        raise NoConvergence(
            f"no convergence after {report.iterations} sweeps (update {report.final_update_norm:.3e})",
            report=report, fields=fields)
    log.debug("R=%g h=%g: %d sweeps, residual %.3e", grid.R, grid.h, report.iterations,
              report.residual_inf)
    return fields, report


def discrete_residual(fields: FieldPair, params: ModelParams) -> float:
    grid = fields.grid
    r = grid.r[:grid.n]
    f = (eval_cost(params.cost[0], r), eval_cost(params.cost[1], r))
    F1, F2 = semilinear_rhs(fields.u[:grid.n], fields.v[:grid.n], params, f)
    lu = laplacian_interior(fields.u, grid, params.dim)
    lv = laplacian_interior(fields.v, grid, params.dim)
    return float(max(np.max(np.abs(lu - F1)), np.max(np.abs(lv - F2))))


def _window_index(grid: RadialGrid, window):
    return int(np.floor(window / grid.h + 1e-9))


def expand_domain(params: ModelParams, M: GrowthBound, coeffs: SubCoeffs, radii, h, tol=1e-10,
                  window=None, max_iters=5000):
    """Solve on balls of increasing radius and measure how much the solution on
    an inner window moves from one ball to the next.

    The window defaults to the inner half of the smaller ball of each pair.
    """
    radii = [float(R) for R in radii]
    if len(radii) < 2 or any(b < a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be a nondecreasing list with at least two entries")
    steps = []
    for R in radii:
        grid = RadialGrid.from_spacing(R, h)
        try:
            fields, report = solve_ball(params, M, coeffs, grid, tol=tol, max_iters=max_iters)
        except (NoConvergence, BracketViolation) as exc:
            exc.args = (f"R={R:g}: {exc.args[0]}",)
            raise
        step = ExpansionStep(R=R, fields=fields, report=report)
        if steps:
            prev = steps[-1]
            w = prev.R / 2 if window is None else float(window)
            m = _window_index(grid, w) + 1
            gu = np.max(np.abs(prev.fields.u[:m] - fields.u[:m]))
            gv = np.max(np.abs(prev.fields.v[:m] - fields.v[:m]))
            step.gap, step.window = float(max(gu, gv)), w
        steps.append(step)
    return steps


def gaps_decreasing(steps) -> bool:
    gaps = [s.gap for s in steps if s.gap is not None]
    return all(b < a for a, b in zip(gaps, gaps[1:]))


def radial_derivative(values, grid: RadialGrid):
    return np.gradient(values, grid.h, edge_order=2)


def extract_values(fields: FieldPair, params: ModelParams, coeffs: SubCoeffs,
                   slope_window=None) -> ValueField:
    """Value functions, feedback control and growth certificates from (u, v).

    ``slope_window`` limits the gradient-growth estimate to ``r <= window``.
    """
    grid = fields.grid
    r = grid.r
    if np.any(fields.u <= 0) or np.any(fields.v <= 0):
        raise DomainError("fields must be positive to take logarithms")
    z = []
    for w, k in ((fields.u, params.k1), (fields.v, params.k2)):
        z.append(-k * np.log(np.minimum(w, 1.0)) + 0.0)
    dz = [radial_derivative(zi, grid) for zi in z]
    K = [max(-params.k[i] * coeffs.B[i], -params.k[i] * coeffs.D[i]) for i in (0, 1)]
    for i in (0, 1):
        bound = K[i] * (1 + r**2)
        if np.any(z[i] > bound * (1 + 1e-12) + 1e-12):
            raise DomainError(f"z{i + 1} exceeds its quadratic growth bound")
    m = grid.n + 1 if slope_window is None else _window_index(grid, slope_window) + 1
    slope = tuple(float(np.max(np.abs(d[:m]) / (1 + r[:m]))) for d in dz)
    return ValueField(grid=grid, z1=z[0], z2=z[1], c1=-dz[0], c2=-dz[1],
                      K1=float(K[0]), K2=float(K[1]), gradient_slope=slope)


def convexity_probe(values: ValueField, tol=1e-8) -> ConvexityReport:
    """Radial convexity and monotonicity of z_i, which give convexity in x."""
    grid = values.grid
    h = grid.h
    min_d2, min_d1 = float("inf"), float("inf")
    for z in (values.z1, values.z2):
        d2 = (z[2:] - 2 * z[1:-1] + z[:-2]) / h**2
        d1 = radial_derivative(z, grid)[1:-1]
        min_d2 = min(min_d2, float(d2.min()))
        min_d1 = min(min_d1, float(d1.min()))
    return ConvexityReport(passed=min_d2 >= -tol and min_d1 >= -tol,
                           min_second_derivative=min_d2, min_slope=min_d1)
