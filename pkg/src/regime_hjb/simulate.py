"""Monte Carlo verification of feedback policies for the regime-switching
controlled diffusion

    dX = c_{e(t)}(X) dt + sigma_{e(t)} dW,   e(t) in {1, 2} a Markov chain,

with discounted cost ``E int_0^T D(t) [f_e(X) + |c_e(X)|^2 / 2] dt``.

Every path ``p`` draws from two numpy generators seeded by
``SeedSequence(master_seed, spawn_key=(p, stream))``, one for the chain and one
for the Brownian increments, so results do not depend on how paths are spread
over worker threads.  All policies in a batch see the same chain path and the
same increments.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _paths
from .closed_form import ClosedForm
from .elliptic import ValueField
from .errors import PolicyBlowUp
from .model import ModelParams

CHAIN_STREAM, NOISE_STREAM = 0, 1
AS_WRITTEN, INTEGRATED = "as_written", "integrated"


@dataclass(frozen=True)
class ChainParams:
    a1: float
    a2: float

    @property
    def rate_matrix(self):
        return np.array([[-self.a1, self.a1], [self.a2, -self.a2]])

    @classmethod
    def from_params(cls, params: ModelParams):
        return cls(params.a1, params.a2)


@dataclass(frozen=True)
class ChainPath:
    horizon: float
    regime0: int
    jump_times: np.ndarray
    states: np.ndarray  # regime (1 or 2) entered at each jump

    def regime_at(self, t):
        j = np.searchsorted(self.jump_times, t, side="right")
        return self.regime0 if j == 0 else int(self.states[j - 1])

    def sojourns(self):
        """(regime, holding time) of every completed sojourn."""
        edges = np.concatenate(([0.0], self.jump_times))
        regimes = np.concatenate(([self.regime0], self.states[:-1])) if len(self.states) else \
            np.array([], dtype=int)
        return regimes, np.diff(edges)


@dataclass(frozen=True)
class ChainStats:
    holding_mean: tuple
    holding_se: tuple
    n_sojourns: tuple
    occupation: tuple
    occupation_se: tuple


@dataclass(frozen=True)
class PolicySpec:
    """Feedback control ``c_i(x) = factor * (-grad z_i(x))``, or zero.

    ``source`` is a :class:`ClosedForm` or a :class:`ValueField`.
    """
    kind: str
    factor: float = 1.0
    source: object = None
    label: str = ""

    @classmethod
    def optimal(cls, source):
        kind = "optimal_closed_form" if isinstance(source, ClosedForm) else "optimal_numeric"
        return cls(kind, 1.0, source, label="optimal")

    @classmethod
    def zero(cls):
        return cls("zero", 0.0, None, label="zero")

    @classmethod
    def scaled(cls, source, factor):
        return cls("scaled", float(factor), source, label=f"scaled:{factor:g}")

    @property
    def name(self):
        return self.label or self.kind


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 20.0
    n_paths: int = 10_000
    master_seed: int = 0
    x0: tuple = (0.0,)
    regime0: int = 1
    discount_mode: str = AS_WRITTEN
    noise: str = "generator"
    workers: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0 and self.dt <= self.horizon):
            raise ValueError("need 0 < dt <= horizon")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.regime0 not in (1, 2):
            raise ValueError("regime0 must be 1 or 2")
        if self.discount_mode not in (AS_WRITTEN, INTEGRATED):
            raise ValueError(f"unknown discount_mode {self.discount_mode!r}")
        if self.noise not in ("generator", "literal"):
            raise ValueError(f"unknown noise {self.noise!r}")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_err: float
    n_paths: int
    discount_mode: str = AS_WRITTEN
    horizon: float = float("nan")
    tail: float = float("nan")

    @classmethod
    def of(cls, samples, **kw):
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(samples.mean()), se, n, **kw)

    def within(self, target, k=3.0):
        return abs(self.mean - target) <= k * self.std_err


@dataclass
class SimBatch:
    """Per-path outputs of one common-random-numbers run."""
    policies: list
    times: np.ndarray
    x: np.ndarray  # (paths, policies, checkpoints, dim)
    regime: np.ndarray  # (paths, checkpoints), 1-based
    discount: np.ndarray  # (paths, checkpoints)
    running: np.ndarray  # (paths, policies, checkpoints)
    cost: np.ndarray  # (paths, policies)
    terminal: np.ndarray  # (paths, policies)
    blown: np.ndarray  # (paths,)
    config: SimConfig = None
    params: ModelParams = None

    def sq_norm(self, p):
        return np.sum(self.x[:, p] ** 2, axis=-1)

    def at(self, times):
        """View restricted to the given checkpoint times (each must be present)."""
        idx = []
        for t in times:
            hit = np.flatnonzero(np.isclose(self.times, float(t), rtol=0, atol=1e-12))
            if hit.size == 0:
                raise ValueError(f"time {t} is not a checkpoint of this batch")
            idx.append(int(hit[0]))
        idx = np.asarray(idx, dtype=int)
        return SimBatch(self.policies, self.times[idx], self.x[:, :, idx], self.regime[:, idx],
                        self.discount[:, idx], self.running[:, :, idx], self.cost, self.terminal,
                        self.blown, self.config, self.params)


@dataclass(frozen=True)
class MartingaleReport:
    times: tuple
    means: tuple
    std_errs: tuple
    target: float
    flat: bool  # every mean within 3 SE of the target
    super_ok: bool  # every mean <= target + 3 SE


@dataclass(frozen=True)
class MomentFitReport:
    times: tuple
    second_moments: tuple
    std_errs: tuple
    C1: float
    C2: float
    passed: bool


@dataclass(frozen=True)
class TransversalityReport:
    times: tuple
    values: tuple
    std_errs: tuple
    passed: bool
    reason: str = ""


# -- seeding -----------------------------------------------------------------

def path_generator(master_seed, path_index, stream):
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(path_index), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


# -- chain -------------------------------------------------------------------

def simulate_chain(chain: ChainParams, T, seed, regime0=1, path_index=0) -> ChainPath:
    gen = path_generator(seed, path_index, CHAIN_STREAM)
    times, states = _paths.sample_chain(gen, float(chain.a1), float(chain.a2), regime0 - 1, float(T))
    return ChainPath(float(T), regime0, times, states + 1)


def chain_statistics(path: ChainPath) -> ChainStats:
    """Holding-time means per regime and long-run occupation fractions.

    The occupation fraction is a ratio estimator over completed
    (regime-1, regime-2) cycles; its standard error uses the delta method.
    """
    regimes, hold = path.sojourns()
    means, ses, counts = [], [], []
    for i in (1, 2):
        h = hold[regimes == i]
        counts.append(int(h.size))
        means.append(float(h.mean()) if h.size else float("nan"))
        ses.append(float(h.std(ddof=1) / math.sqrt(h.size)) if h.size > 1 else float("nan"))
    # pair consecutive sojourns into cycles starting in regime 1
    start = 0 if path.regime0 == 1 else 1
    h = hold[start:]
    m = h.size // 2
    x1, x2 = h[0:2 * m:2], h[1:2 * m:2]
    occ, occ_se = [], []
    if m > 1:
        cyc = x1 + x2
        frac = x1.sum() / cyc.sum()
        resid = x1 - frac * cyc
        se = float(resid.std(ddof=1) / (math.sqrt(m) * cyc.mean()))
        occ, occ_se = [float(frac), float(1 - frac)], [se, se]
    else:
        occ, occ_se = [float("nan")] * 2, [float("nan")] * 2
    return ChainStats(tuple(means), tuple(ses), tuple(counts), tuple(occ), tuple(occ_se))


# -- policy encoding -----------------------------------------------------------

def _value_table(source: ValueField, window):
    grid = source.grid
    m = grid.n if window is None else int(np.floor(window / grid.h + 1e-9))
    m = max(m, 1)
    ctab = np.vstack([source.c1[:m + 1], source.c2[:m + 1]])
    ztab = np.vstack([source.z1[:m + 1], source.z2[:m + 1]])
    return grid.h, ctab, ztab


def _encode(policies, window):
    sources = {id(p.source): p.source for p in policies if p.source is not None and p.kind != "zero"}
    if len(sources) > 1:
        raise ValueError("policies in one batch must share a single value source")
    source = next(iter(sources.values()), None)
    codes = np.zeros(len(policies), dtype=np.int64)
    factors = np.zeros(len(policies))
    alpha = np.zeros(2)
    tab_h, ctab = 1.0, np.zeros((2, 2))
    for i, p in enumerate(policies):
        if p.kind == "zero" or p.source is None:
            continue
        codes[i] = _paths.CLOSED if isinstance(p.source, ClosedForm) else _paths.TABLE
        factors[i] = p.factor
    if isinstance(source, ClosedForm):
        alpha[:] = source.slope
    elif isinstance(source, ValueField):
        tab_h, ctab, _ = _value_table(source, window)
    return codes, factors, alpha, float(tab_h), np.ascontiguousarray(ctab)


def value_function(source, window=None):
    """``z(r, regime)`` for a closed form or a tabulated value field.

    Tables are linearly interpolated and extended beyond their last node by
    the quadratic profile ``z(R)(1 + r^2)/(1 + R^2)``.
    """
    if isinstance(source, ClosedForm):
        return lambda r, regime: source.z(r, regime)
    h, _, ztab = _value_table(source, window if window is not None else source.grid.R / 2)
    R = h * (ztab.shape[1] - 1)
    nodes = np.arange(ztab.shape[1]) * h

    def z(r, regime):
        r = np.asarray(r, dtype=float)
        tab = ztab[regime - 1]
        inside = np.interp(r, nodes, tab)
        return np.where(r <= R, inside, tab[-1] * (1 + r**2) / (1 + R**2))
    return z


def noise_scale(params: ModelParams, noise="generator"):
    """Diffusion coefficient per regime.

    ``"generator"`` uses sqrt(k_i), so the generator's second-order part is
    (k_i/2) Laplacian as in the HJB system; ``"literal"`` uses k_i.
    """
    k = np.array(params.k, dtype=float)
    return np.sqrt(k) if noise == "generator" else k


# -- batch runner --------------------------------------------------------------

def _checkpoint_indices(times, config: SimConfig):
    times = np.asarray(sorted(set(float(t) for t in times)), dtype=float)
    idx = np.rint(times / config.dt).astype(np.int64)
    if np.any(np.abs(idx * config.dt - times) > 1e-9 * np.maximum(1.0, times)):
        raise ValueError("checkpoint times must be multiples of dt")
    if np.any(idx < 0) or np.any(idx > config.n_steps):
        raise ValueError("checkpoint times must lie in [0, horizon]")
    return times, idx


def run_batch(policies, params: ModelParams, config: SimConfig, checkpoints=(),
              chain: ChainParams | None = None, table_window=None) -> SimBatch:
    """Simulate ``config.n_paths`` paths for all ``policies`` at once."""
    policies = list(policies)
    chain = chain or ChainParams.from_params(params)
    x0 = np.asarray(config.x0, dtype=float)
    if x0.shape != (params.dim,):
        raise ValueError(f"x0 must have {params.dim} components")
    times, ck_idx = _checkpoint_indices(checkpoints, config)
    window = table_window
    if window is None:
        src = next((p.source for p in policies if isinstance(p.source, ValueField)), None)
        window = src.grid.R / 2 if src is not None else None
    codes, factors, alpha, tab_h, ctab = _encode(policies, window)
    sig = noise_scale(params, config.noise)
    lam = np.array(params.lam, dtype=float)
    cost = np.array([[c.p, c.s, c.q] for c in params.cost], dtype=float)
    integrated = config.discount_mode == INTEGRATED

    n, P, C = config.n_paths, len(policies), len(times)
    out_x = np.full((n, P, C, params.dim), np.nan)
    out_reg = np.zeros((n, C), dtype=np.int64)
    out_disc = np.full((n, C), np.nan)
    out_run = np.full((n, P, C), np.nan)
    out_cost = np.full((n, P), np.nan)
    out_term = np.full((n, P), np.nan)
    blown = np.zeros(n, dtype=bool)
    T = config.n_steps * config.dt

    def work(lo, hi):
        for i in range(lo, hi):
            gen_c = path_generator(config.master_seed, i, CHAIN_STREAM)
            jt, js = _paths.sample_chain(gen_c, float(chain.a1), float(chain.a2),
                                         config.regime0 - 1, T)
            gen_w = path_generator(config.master_seed, i, NOISE_STREAM)
            blown[i] = _paths.run_path(
                gen_w, jt, js, config.regime0 - 1, x0, float(config.dt), config.n_steps,
                sig, lam, cost, integrated, codes, factors, alpha, tab_h, ctab,
                ck_idx, out_x[i], out_reg[i], out_disc[i], out_run[i], out_cost[i], out_term[i])

    workers = max(1, int(config.workers))
    if workers == 1:
        work(0, n)
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(work, bounds[:-1], bounds[1:]))
    return SimBatch(policies, times, out_x, out_reg + 1, out_disc, out_run, out_cost,
                    out_term, blown, config, params)


def _require_stable(batch: SimBatch):
    if batch.blown.any():
        raise PolicyBlowUp(f"{int(batch.blown.sum())} paths exceeded |X| = 1e8")


# -- estimators ----------------------------------------------------------------

def simulate_sde(policy: PolicySpec, params: ModelParams, config: SimConfig, times):
    """States X(t) at ``times`` for every path: array (paths, len(times), dim)."""
    batch = run_batch([policy], params, config, times)
    _require_stable(batch)
    return batch.times, batch.x[:, 0]


def cost_estimates(batch: SimBatch):
    """Cost estimate per policy of a batch, keyed by policy name.

    ``tail`` is the mean terminal discounted integrand divided by the smallest
    discount rate, a bound on the truncated remainder when the undiscounted
    integrand stays bounded.
    """
    _require_stable(batch)
    lam_min = min(batch.params.lam)
    out = {}
    for p, pol in enumerate(batch.policies):
        out[pol.name] = McEstimate.of(
            batch.cost[:, p], discount_mode=batch.config.discount_mode,
            horizon=batch.config.n_steps * batch.config.dt, tail=float(np.mean(batch.terminal[:, p])) / lam_min)
    return out


def estimate_cost(policy: PolicySpec, params: ModelParams, config: SimConfig) -> McEstimate:
    """Discounted cost up to the horizon (see :func:`cost_estimates`)."""
    return cost_estimates(run_batch([policy], params, config))[policy.name]


def paired_difference(batch: SimBatch, p, q) -> McEstimate:
    """Estimate of J(policy p) - J(policy q) on common random numbers."""
    _require_stable(batch)
    return McEstimate.of(batch.cost[:, p] - batch.cost[:, q],
                         discount_mode=batch.config.discount_mode)


def compare_policies(policies, params: ModelParams, config: SimConfig):
    """Cost of every policy plus paired differences against the first one."""
    batch = run_batch(policies, params, config)
    est = cost_estimates(batch)
    diffs = {pol.name: paired_difference(batch, i, 0) for i, pol in enumerate(policies) if i}
    return est, diffs


def martingale_from_batch(batch: SimBatch, p, value_source, value_window=None) -> MartingaleReport:
    """Mean of ``D(t) u(X_t, e_t) - int_0^t D [f + |c|^2/2]`` with ``u = -z``."""
    z = value_function(value_source, value_window)
    x0 = np.asarray(batch.config.x0, float)
    target = -float(z(np.linalg.norm(x0), batch.config.regime0))
    means, ses = [], []
    for c in range(len(batch.times)):
        r = np.sqrt(batch.sq_norm(p)[:, c])
        reg = batch.regime[:, c]
        zval = np.where(reg == 1, z(r, 1), z(r, 2))
        M = -batch.discount[:, c] * zval - batch.running[:, p, c]
        est = McEstimate.of(M)
        means.append(est.mean)
        ses.append(est.std_err)
    means, ses = np.array(means), np.array(ses)
    # zero-variance checkpoints (t = 0) are compared up to rounding
    slack = 3 * ses + 1e-12 * (1 + abs(target))
    return MartingaleReport(tuple(batch.times.tolist()), tuple(means.tolist()),
                            tuple(ses.tolist()), target,
                            flat=bool(np.all(np.abs(means - target) <= slack)),
                            super_ok=bool(np.all(means <= target + slack)))


def martingale_test(policy: PolicySpec, value_source, params: ModelParams, config: SimConfig,
                    checkpoints) -> MartingaleReport:
    batch = run_batch([policy], params, config, checkpoints)
    _require_stable(batch)
    return martingale_from_batch(batch, 0, value_source)


def fit_envelope(times, moments):
    """Constants (C1, C2 >= 0) with ``C1 exp(C2 t)`` above every sample.

    C2 is the least-squares slope of log moments (clipped at zero); C1 is then
    the smallest intercept that dominates all samples.
    """
    t = np.asarray(times, float)
    m = np.asarray(moments, float)
    pos = m > 0
    if pos.sum() >= 2:
        C2 = max(float(np.polyfit(t[pos], np.log(m[pos]), 1)[0]), 0.0)
    else:
        C2 = 0.0
    C1 = float(np.max(m * np.exp(-C2 * t))) if m.size else 0.0
    C1 = max(C1, np.finfo(float).tiny)
    return C1, C2


def moments_from_batch(batch: SimBatch, p):
    sq = batch.sq_norm(p)
    means = sq.mean(axis=0)
    ses = sq.std(axis=0, ddof=1) / math.sqrt(sq.shape[0])
    return means, ses


def moment_report(times, means, ses) -> MomentFitReport:
    C1, C2 = fit_envelope(times, means)
    env = C1 * np.exp(C2 * np.asarray(times, float))
    ok = bool(np.all(np.asarray(means) <= env * (1 + 1e-12)))
    return MomentFitReport(tuple(float(t) for t in times), tuple(float(m) for m in means),
                           tuple(float(s) for s in ses), C1, C2, ok)


def moment_bound_test(policy: PolicySpec, params: ModelParams, config: SimConfig,
                      times) -> MomentFitReport:
    batch = run_batch([policy], params, config, times)
    _require_stable(batch)
    means, ses = moments_from_batch(batch, 0)
    return moment_report(batch.times, means, ses)


def transversality_report(times, values, ses, rel=1e-3) -> TransversalityReport:
    v = np.asarray(values, float)
    tail_ok = bool(np.all(np.diff(v[1:]) < 0)) if v.size > 2 else True
    final_ok = bool(v[-1] <= rel * v[0])
    reason = "" if (tail_ok and final_ok) else (
        "tail not decreasing" if not tail_ok else "final value above threshold")
    return TransversalityReport(tuple(float(t) for t in times), tuple(float(x) for x in v), tuple(float(s) for s in ses),
                                tail_ok and final_ok, reason)


def discounted_moments(batch: SimBatch, p):
    vals = batch.discount * batch.sq_norm(p)
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(vals.shape[0])


def transversality_test(policy: PolicySpec, params: ModelParams, config: SimConfig,
                        times) -> TransversalityReport:
    """Decay of ``E[D(t) |X(t)|^2]`` along increasing ``times``."""
    times = [float(t) for t in times]
    batch = run_batch([policy], params, config, times)
    if batch.blown.any():
        return TransversalityReport(tuple(times), (), (), False, "policy blow-up")
    means, ses = discounted_moments(batch, 0)
    return transversality_report(batch.times, means, ses)


def suggest_horizon(params: ModelParams, rel=1e-3, dt=1e-3):
    """Horizon where the discount has fallen to ``rel`` times a quadratic
    safety factor, rounded up to a multiple of ``dt``."""
    lam = min(params.lam)
    T = math.log(1 / rel) / lam
    T += 2 * math.log(1 + T) / lam
    return math.ceil(T / dt) * dt
