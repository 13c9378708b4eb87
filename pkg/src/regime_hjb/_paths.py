"""Compiled per-path kernels for the regime chain and the modulated SDE.

One call simulates one path for several policies at once, sharing the chain
path and the Brownian increments (common random numbers).
"""
import numpy as np
from numba import njit

ZERO, CLOSED, TABLE = 0, 1, 2
BLOWUP_SQ = 1e16  # |X| > 1e8


@njit(nogil=True, cache=True)
def sample_chain(gen, a1, a2, regime0, T):
    """Jump times in (0, T] and the regime entered at each jump (0-based)."""
    cap = 16
    times = np.empty(cap)
    states = np.empty(cap, dtype=np.int64)
    t = 0.0
    s = regime0
    n = 0
    while True:
        rate = a1 if s == 0 else a2
        t += gen.exponential(1.0 / rate)
        if t > T:
            break
        if n == cap:
            cap *= 2
            nt = np.empty(cap)
            ns = np.empty(cap, dtype=np.int64)
            nt[:n] = times[:n]
            ns[:n] = states[:n]
            times, states = nt, ns
        s = 1 - s
        times[n] = t
        states[n] = s
        n += 1
    return times[:n].copy(), states[:n].copy()


@njit(nogil=True, cache=True)
def _interp_uniform(tab, h, r):
    m = tab.shape[0] - 1
    rmax = m * h
    if r >= rmax:
        return tab[m] * r / rmax if rmax > 0 else tab[m]
    s = r / h
    j = int(s)
    w = s - j
    return (1.0 - w) * tab[j] + w * tab[j + 1]


@njit(nogil=True, cache=True)
def run_path(gen, jump_times, jump_states, regime0, x0, dt, n_steps,
             sig, lam, cost, integrated,
             pol_code, pol_factor, alpha, tab_h, ctab,
             ck_idx, out_x, out_reg, out_disc, out_run, out_cost, out_term):
    """Euler-Maruyama path with regime jumps inserted as step boundaries.

    Writes checkpoint states/discounts/running costs into the ``out_*`` views
    and returns True if any policy's state blew up.
    """
    P = pol_code.shape[0]
    dim = x0.shape[0]
    C = ck_idx.shape[0]
    x = np.empty((P, dim))
    gain = np.zeros((P, 2))
    for p in range(P):
        for d in range(dim):
            x[p, d] = x0[d]
        if pol_code[p] == CLOSED:
            gain[p, 0] = -2.0 * alpha[0] * pol_factor[p]
            gain[p, 1] = -2.0 * alpha[1] * pol_factor[p]
    need_rn = cost[0, 1] != 0.0 or cost[1, 1] != 0.0
    run = np.zeros(P)
    z = np.empty(dim)
    reg = regime0
    e_full = np.exp(-lam * dt)
    sq_dt = np.sqrt(dt)
    E0, E1 = 1.0, 1.0  # exp(-lam_i t)
    Dint = 1.0  # exp(-int_0^t lam)
    t = 0.0
    jp = 0
    n_jumps = jump_times.shape[0]
    nj = jump_times[0] if n_jumps > 0 else np.inf
    ck = 0
    while ck < C and ck_idx[ck] == 0:
        for p in range(P):
            for d in range(dim):
                out_x[p, ck, d] = x[p, d]
            out_run[p, ck] = 0.0
        out_reg[ck] = reg
        out_disc[ck] = 1.0
        ck += 1

    for n in range(n_steps):
        t_end = (n + 1) * dt
        # steps containing jumps are split at each jump time
        full = nj >= t_end
        while True:
            switching = nj < t_end
            if full:
                h = dt
                sq_h = sq_dt
            else:
                h = (nj if switching else t_end) - t
                sq_h = np.sqrt(h)
            if h > 0.0:
                D = Dint if integrated else (E0 if reg == 0 else E1)
                s_reg = sq_h * sig[reg]
                cp, cs, cq = cost[reg, 0], cost[reg, 1], cost[reg, 2]
                Dh = D * h
                for d in range(dim):
                    z[d] = gen.standard_normal() * s_reg
                for p in range(P):
                    code = pol_code[p]
                    r2 = 0.0
                    for d in range(dim):
                        r2 += x[p, d] * x[p, d]
                    if r2 > BLOWUP_SQ:
                        return True
                    rn = np.sqrt(r2) if (need_rn or code == TABLE) else 0.0
                    # radial feedback c = g x
                    if code == CLOSED:
                        g = gain[p, reg]
                    elif code == TABLE and rn > 0.0:
                        g = pol_factor[p] * _interp_uniform(ctab[reg], tab_h, rn) / rn
                    else:
                        g = 0.0
                    run[p] += Dh * (cp * r2 + cs * rn + cq + 0.5 * g * g * r2)
                    gh = 1.0 + g * h
                    for d in range(dim):
                        x[p, d] = x[p, d] * gh + z[d]
                if full:
                    E0 *= e_full[0]
                    E1 *= e_full[1]
                    Dint *= e_full[reg]
                else:
                    E0 *= np.exp(-lam[0] * h)
                    E1 *= np.exp(-lam[1] * h)
                    Dint *= np.exp(-lam[reg] * h)
            if not switching:
                break
            t = nj
            reg = jump_states[jp]
            jp += 1
            nj = jump_times[jp] if jp < n_jumps else np.inf
        t = t_end
        while ck < C and ck_idx[ck] == n + 1:
            for p in range(P):
                for d in range(dim):
                    out_x[p, ck, d] = x[p, d]
                out_run[p, ck] = run[p]
            out_reg[ck] = reg
            out_disc[ck] = Dint if integrated else (E0 if reg == 0 else E1)
            ck += 1

    D = Dint if integrated else (E0 if reg == 0 else E1)
    for p in range(P):
        out_cost[p] = run[p]
        r2 = 0.0
        for d in range(dim):
            r2 += x[p, d] * x[p, d]
        if r2 > BLOWUP_SQ:
            return True
        rn = np.sqrt(r2)
        code = pol_code[p]
        if code == CLOSED:
            g = 2.0 * alpha[reg] * pol_factor[p] * rn
        elif code == TABLE:
            g = pol_factor[p] * _interp_uniform(ctab[reg], tab_h, rn)
        else:
            g = 0.0
        f = cost[reg, 0] * r2 + cost[reg, 1] * rn + cost[reg, 2]
        out_term[p] = D * (f + 0.5 * g * g)
    return False
