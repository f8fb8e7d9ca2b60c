"""Compiled inner loops.

Everything hot runs here: orbit iteration, streaming iterated sums,
autocorrelation lags, fast-slow paths, suspension-flow quadrature.  Kernels
are pure functions of their arguments; all randomness enters through
pre-drawn arrays, so outputs are bit-identical for fixed inputs regardless
of the number of threads.

Doubling-map state.  The binary doubling map sheds one mantissa bit per
step, so float64 orbits collapse onto 0 within ~52 iterations.  Kernels
therefore iterate 2z mod p exactly on the integer lattice z in [1, p) with
p = 2**50 - 35 (prime, 2 a primitive root, period p - 1 ~ 1.1e15); the
lattice fits float64 integer arithmetic exactly.  Kernel state arrays hold
z for the doubling map and the point itself for the other maps; `to_pt`
converts a state to the point used for observable and roof evaluation.

Integer codes (kept in sync with the registries in `dynamics`/`semiflow`):

    map:   0 lsv(gamma)   1 doubling   2 quadratic(a)
    obs:   0 zero  1 x  2 cos(2 pi x)  3 (x, cos 2 pi x, x^2)
           4 (1+a x) cos(2 pi x)       5 1 - cos(1 + a x)
    roof:  0 const 1     1 1 + a x
    fiber: 0 cos(2 pi x)   1 sin(u)   2 const 1
"""

from __future__ import annotations

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "16")

import numpy as np
from numba import config as _nbconfig
from numba import get_num_threads, njit, prange, set_num_threads

TWO_PI = 2.0 * np.pi

DOUBLING_MOD = 1125899906842589.0  # 2**50 - 35; prime with primitive root 2
DOUBLING_INV = 1.0 / DOUBLING_MOD

_MAX_THREADS = int(_nbconfig.NUMBA_NUM_THREADS)

# Single-threaded by default; the harness raises this per run.
set_num_threads(1)


def set_workers(n: int) -> int:
    """Clamp and apply the numba thread count; returns the value in effect."""
    n = max(1, min(int(n), _MAX_THREADS))
    set_num_threads(n)
    return get_num_threads()


@njit(inline="always")
def map_step(mid, mp, x):
    if mid == 0:
        # neutral fixed point at 0; branch point 1/2 belongs to the left branch
        if x <= 0.5:
            return x * (1.0 + (2.0 * x) ** mp)
        return 2.0 * x - 1.0
    elif mid == 1:
        y = 2.0 * x
        if y >= DOUBLING_MOD:
            y -= DOUBLING_MOD
        return y
    else:
        return 1.0 - mp * x * x


@njit(inline="always")
def to_pt(mid, x):
    """State -> point on the interval (identity except for the doubling lattice)."""
    if mid == 1:
        return x * DOUBLING_INV
    return x


@njit(inline="always")
def obs_eval1(oid, op, x):
    if oid == 0:
        return 0.0
    elif oid == 1:
        return x
    elif oid == 2:
        return np.cos(TWO_PI * x)
    elif oid == 4:
        return (1.0 + op * x) * np.cos(TWO_PI * x)
    elif oid == 5:
        return 1.0 - np.cos(1.0 + op * x)
    return 0.0


@njit(inline="always")
def obs_eval(oid, op, x, out):
    if oid == 3:
        out[0] = x
        out[1] = np.cos(TWO_PI * x)
        out[2] = x * x
    else:
        out[0] = obs_eval1(oid, op, x)


@njit(cache=True, parallel=True)
def iterate_ensemble(mid, mp, x0, nsteps):
    """Advance an array of states; inputs and outputs are states."""
    out = np.empty_like(x0)
    for m in prange(x0.shape[0]):
        x = x0[m]
        for _ in range(nsteps):
            x = map_step(mid, mp, x)
        out[m] = x
    return out


@njit(cache=True)
def orbit_points(mid, mp, x0, n):
    """Orbit of points (state trajectory converted through to_pt)."""
    out = np.empty(n)
    x = x0
    for k in range(n):
        out[k] = to_pt(mid, x)
        x = map_step(mid, mp, x)
    return out


@njit(cache=True)
def orbit_obs(mid, mp, oid, op, c, x0, burn, n, d):
    """Centered observable values along one orbit, shape (n, d)."""
    out = np.empty((n, d))
    v = np.empty(d)
    x = x0
    for _ in range(burn):
        x = map_step(mid, mp, x)
    for k in range(n):
        obs_eval(oid, op, to_pt(mid, x), v)
        for i in range(d):
            out[k, i] = v[i] - c[i]
        x = map_step(mid, mp, x)
    return out


@njit(cache=True, parallel=True)
def ensemble_stats_1d(mid, mp, oid, op, c0, x0, burn, snaps):
    """Streaming (S, SS, Q) with running maxima, scalar observable.

    snaps holds sorted step counts (may start at 0).  Returns per-sample
    snapshots of S_k, SS_k, Q_k plus running max_{j<=k} |S_j|, |SS_j|.
    """
    M = x0.shape[0]
    G = snaps.shape[0]
    S_out = np.zeros((M, G))
    SS_out = np.zeros((M, G))
    Q_out = np.zeros((M, G))
    maxS = np.zeros((M, G))
    maxSS = np.zeros((M, G))
    nmax = snaps[G - 1]
    for m in prange(M):
        x = x0[m]
        for _ in range(burn):
            x = map_step(mid, mp, x)
        S = 0.0
        SS = 0.0
        Q = 0.0
        mS = 0.0
        mSS = 0.0
        g = 0
        while g < G and snaps[g] == 0:
            g += 1
        for k in range(1, nmax + 1):
            v = obs_eval1(oid, op, to_pt(mid, x)) - c0
            SS += S * v
            Q += v * v
            S += v
            a = np.abs(S)
            if a > mS:
                mS = a
            a = np.abs(SS)
            if a > mSS:
                mSS = a
            x = map_step(mid, mp, x)
            while g < G and snaps[g] == k:
                S_out[m, g] = S
                SS_out[m, g] = SS
                Q_out[m, g] = Q
                maxS[m, g] = mS
                maxSS[m, g] = mSS
                g += 1
    return S_out, SS_out, Q_out, maxS, maxSS


@njit(cache=True, parallel=True)
def ensemble_stats_nd(mid, mp, oid, op, c, x0, burn, snaps, d):
    M = x0.shape[0]
    G = snaps.shape[0]
    S_out = np.zeros((M, G, d))
    SS_out = np.zeros((M, G, d, d))
    Q_out = np.zeros((M, G, d, d))
    maxS = np.zeros((M, G))
    maxSS = np.zeros((M, G))
    nmax = snaps[G - 1]
    for m in prange(M):
        x = x0[m]
        for _ in range(burn):
            x = map_step(mid, mp, x)
        S = np.zeros(d)
        SS = np.zeros((d, d))
        Q = np.zeros((d, d))
        v = np.empty(d)
        mS = 0.0
        mSS = 0.0
        g = 0
        while g < G and snaps[g] == 0:
            g += 1
        for k in range(1, nmax + 1):
            obs_eval(oid, op, to_pt(mid, x), v)
            for i in range(d):
                v[i] -= c[i]
            s2 = 0.0
            q2 = 0.0
            for i in range(d):
                for j in range(d):
                    SS[i, j] += S[i] * v[j]
                    Q[i, j] += v[i] * v[j]
            for i in range(d):
                S[i] += v[i]
                s2 += S[i] * S[i]
            for i in range(d):
                for j in range(d):
                    q2 += SS[i, j] * SS[i, j]
            if s2 > mS:
                mS = s2
            if q2 > mSS:
                mSS = q2
            x = map_step(mid, mp, x)
            while g < G and snaps[g] == k:
                for i in range(d):
                    S_out[m, g, i] = S[i]
                    for j in range(d):
                        SS_out[m, g, i, j] = SS[i, j]
                        Q_out[m, g, i, j] = Q[i, j]
                maxS[m, g] = np.sqrt(mS)
                maxSS[m, g] = np.sqrt(mSS)
                g += 1
    return S_out, SS_out, Q_out, maxS, maxSS


@njit(cache=True, parallel=True)
def gk_batch(vals, n_lags, n_batches):
    """Per-batch lagged products (1/bl) sum_j v_j (x) v_{j+lag}.

    vals has shape (L, d); the last n_lags points only serve as lag
    partners so every batch sums the same number of products.
    """
    L, d = vals.shape
    usable = L - n_lags
    bl = usable // n_batches
    C = np.zeros((n_batches, n_lags + 1, d, d))
    for b in prange(n_batches):
        lo = b * bl
        hi = lo + bl
        for lag in range(n_lags + 1):
            for p in range(d):
                for q in range(d):
                    acc = 0.0
                    for j in range(lo, hi):
                        acc += vals[j, p] * vals[j + lag, q]
                    C[b, lag, p, q] = acc / bl
    return C


@njit(cache=True, parallel=True)
def fastslow_paths(mid, mp, aid, bid, oid, op, c0, glo, ghi, offs, xi, y0, n, snaps):
    """Scalar fast-slow recursion x' = x + a(x)/n + b(x,y)/sqrt(n).

    offs holds the centering offset of the raw noise preset on a uniform
    grid over [glo, ghi]; linear interpolation, flat extrapolation.
    Divergent paths (|x| > 1e12) are flagged and left at their last value.
    """
    M = y0.shape[0]
    G = snaps.shape[0]
    X = np.zeros((M, G))
    flags = np.zeros(M, dtype=np.int64)
    nmax = snaps[G - 1]
    inv_n = 1.0 / n
    inv_sq = 1.0 / np.sqrt(n)
    ng = offs.shape[0]
    dg = (ghi - glo) / (ng - 1)
    for m in prange(M):
        y = y0[m]
        x = xi
        g = 0
        while g < G and snaps[g] == 0:
            X[m, g] = x
            g += 1
        for k in range(1, nmax + 1):
            # drift
            if aid == 0:
                a = 0.0
            else:
                a = -x
            # raw noise
            vy = obs_eval1(oid, op, to_pt(mid, y)) - c0
            if bid == 0:
                b = 0.0
            elif bid == 1:
                b = vy
            else:
                b = x * vy
            # centering offset at x
            t = (x - glo) / dg
            if t <= 0.0:
                off = offs[0]
            elif t >= ng - 1:
                off = offs[ng - 1]
            else:
                i0 = int(t)
                fr = t - i0
                off = offs[i0] * (1.0 - fr) + offs[i0 + 1] * fr
            x = x + a * inv_n + (b - off) * inv_sq
            if np.abs(x) > 1e12:
                flags[m] = 1
                break
            y = map_step(mid, mp, y)
            while g < G and snaps[g] == k:
                X[m, g] = x
                g += 1
    return X, flags


@njit(inline="always")
def roof_eval(rid, rp, x):
    if rid == 0:
        return 1.0
    return 1.0 + rp * x


@njit(inline="always")
def fiber_eval(fid, fp, x, u):
    if fid == 0:
        return np.cos(TWO_PI * x)
    elif fid == 1:
        return np.sin(u)
    return 1.0


@njit(cache=True, parallel=True)
def flow_ensemble(mid, mp, rid, rp, fid, fp, c0, x0, u0, dt, snapsteps):
    """Left-endpoint quadrature of (S_t, SS_t) along the suspension flow.

    Also tracks the running sup of |S_t| for flow moment scaling.
    """
    M = x0.shape[0]
    G = snapsteps.shape[0]
    S_out = np.zeros((M, G))
    SS_out = np.zeros((M, G))
    Smax_out = np.zeros((M, G))
    nmax = snapsteps[G - 1]
    for m in prange(M):
        x = x0[m]
        u = u0[m]
        S = 0.0
        SS = 0.0
        mS = 0.0
        g = 0
        while g < G and snapsteps[g] == 0:
            g += 1
        for k in range(1, nmax + 1):
            pt = to_pt(mid, x)
            v = fiber_eval(fid, fp, pt, u) - c0
            SS += S * v * dt
            S += v * dt
            a = np.abs(S)
            if a > mS:
                mS = a
            u += dt
            h = roof_eval(rid, rp, pt)
            while u >= h:
                u -= h
                x = map_step(mid, mp, x)
                h = roof_eval(rid, rp, to_pt(mid, x))
            while g < G and snapsteps[g] == k:
                S_out[m, g] = S
                SS_out[m, g] = SS
                Smax_out[m, g] = mS
                g += 1
    return S_out, SS_out, Smax_out


@njit(cache=True)
def flow_traj(mid, mp, rid, rp, fid, fp, c0, x, u, nsteps, dt):
    S_traj = np.zeros(nsteps + 1)
    SS_traj = np.zeros(nsteps + 1)
    S = 0.0
    SS = 0.0
    for k in range(1, nsteps + 1):
        pt = to_pt(mid, x)
        v = fiber_eval(fid, fp, pt, u) - c0
        SS += S * v * dt
        S += v * dt
        u += dt
        h = roof_eval(rid, rp, pt)
        while u >= h:
            u -= h
            x = map_step(mid, mp, x)
            h = roof_eval(rid, rp, to_pt(mid, x))
        S_traj[k] = S
        SS_traj[k] = SS
    return S_traj, SS_traj


@njit(cache=True, parallel=True)
def lap_counts(mid, mp, rid, rp, x0, u0, t):
    M = x0.shape[0]
    out = np.empty(M, dtype=np.int64)
    for m in prange(M):
        x = x0[m]
        budget = u0[m] + t
        n = 0
        while True:
            h = roof_eval(rid, rp, to_pt(mid, x))
            if h <= budget:
                budget -= h
                x = map_step(mid, mp, x)
                n += 1
            else:
                break
        out[m] = n
    return out


@njit(cache=True, parallel=True)
def lap_sup_dev(mid, mp, rid, rp, x0, u0, t1, hbar):
    """sup_{t <= t1} |N(t) - t/hbar| per initial state."""
    M = x0.shape[0]
    out = np.empty(M)
    for m in prange(M):
        x = x0[m]
        u = u0[m]
        sup = 0.0
        roof_sum = 0.0
        n = 0
        t_lo = 0.0
        while True:
            roof_sum += roof_eval(rid, rp, to_pt(mid, x))
            t_next = roof_sum - u  # time at which N jumps to n+1
            t_hi = t_next if t_next < t1 else t1
            a = np.abs(n - t_lo / hbar)
            if a > sup:
                sup = a
            a = np.abs(n - t_hi / hbar)
            if a > sup:
                sup = a
            if t_next >= t1:
                break
            x = map_step(mid, mp, x)
            n += 1
            t_lo = t_next
        out[m] = sup
    return out


@njit(cache=True, parallel=True)
def first_return_times(mid, mp, y0, cap, ylo):
    """First-return times to Y = [ylo, 1]; cap+1 marks a capped orbit."""
    M = y0.shape[0]
    out = np.empty(M, dtype=np.int64)
    for m in prange(M):
        x = y0[m]
        tau = cap + 1
        for k in range(1, cap + 1):
            x = map_step(mid, mp, x)
            if to_pt(mid, x) >= ylo:
                tau = k
                break
        out[m] = tau
    return out


@njit(cache=True, parallel=True)
def induced_map_iterate(mid, mp, y0, ylo, nreturns, cap):
    """Apply the first-return map F nreturns times to each start state."""
    M = y0.shape[0]
    out = np.empty(M)
    for m in prange(M):
        x = y0[m]
        for _ in range(nreturns):
            for k in range(cap):
                x = map_step(mid, mp, x)
                if to_pt(mid, x) >= ylo:
                    break
        out[m] = x
    return out


@njit(cache=True, parallel=True)
def induced_block_sums(mid, mp, oid, op, c, y_rep, tau, d):
    """phi'[a, j, :] = sum_{l < tau(a)} v(T^l y_rep[a, j]), v centered.

    y_rep holds kernel states (lattice values for the doubling map).
    """
    ncyl, nbin = y_rep.shape
    out = np.zeros((ncyl, nbin, d))
    for a in prange(ncyl):
        v = np.empty(d)
        for j in range(nbin):
            z = y_rep[a, j]
            for _ in range(tau[a]):
                obs_eval(oid, op, to_pt(mid, z), v)
                for i in range(d):
                    out[a, j, i] += v[i] - c[i]
                z = map_step(mid, mp, z)
    return out


@njit(cache=True, parallel=True)
def chi_phi_level_sums(mid, mp, oid, op, c, y_rep, tau, m_cell, chi_cell, d):
    """Per-cylinder sum of m_cell * sum_l (chi' + partial_l) (x) phi_l.

    chi(y, l) = chi'(y) + sum_{k<l} phi(y, k) is streamed level by level;
    nothing of size tau is ever materialised.
    """
    ncyl, nbin = y_rep.shape
    out = np.zeros((ncyl, d, d))
    for a in prange(ncyl):
        v = np.empty(d)
        partial = np.empty(d)
        for j in range(nbin):
            w = m_cell[a, j]
            if w == 0.0:
                continue
            z = y_rep[a, j]
            for i in range(d):
                partial[i] = 0.0
            for _ in range(tau[a]):
                obs_eval(oid, op, to_pt(mid, z), v)
                for i in range(d):
                    v[i] -= c[i]
                for p in range(d):
                    cp = chi_cell[a, j, p] + partial[p]
                    for q in range(d):
                        out[a, p, q] += w * cp * v[q]
                for i in range(d):
                    partial[i] += v[i]
                z = map_step(mid, mp, z)
    return out


@njit(cache=True, parallel=True)
def ul_mm_birkhoff(mid, mp, x0, burn, ngrid, G_flat, ylo, w, nmat):
    """Birkhoff averages of the pulled-back kernel statistic.

    G_flat: (bins, nmat) values of P(m' (x) m') per Y bin.  A step
    contributes G at the bin of the next state whenever that state lands
    in Y = [ylo, 1].
    """
    M = x0.shape[0]
    P = ngrid.shape[0]
    bins = G_flat.shape[0]
    out = np.zeros((M, P, nmat))
    nmax = ngrid[P - 1]
    for m in prange(M):
        x = x0[m]
        for _ in range(burn):
            x = map_step(mid, mp, x)
        acc = np.zeros(nmat)
        g = 0
        for k in range(1, nmax + 1):
            x = map_step(mid, mp, x)
            pt = to_pt(mid, x)
            if pt >= ylo:
                b = int((pt - ylo) / w)
                if b >= bins:
                    b = bins - 1
                for i in range(nmat):
                    acc[i] += G_flat[b, i]
            while g < P and ngrid[g] == k:
                for i in range(nmat):
                    out[m, g, i] = acc[i] / k
                g += 1
    return out


@njit(cache=True)
def orbit_histogram(mid, mp, x0, burn, n, lo, hi, bins):
    """Occupation histogram of one long orbit; density normalisation."""
    counts = np.zeros(bins)
    x = x0
    for _ in range(burn):
        x = map_step(mid, mp, x)
    w = (hi - lo) / bins
    for _ in range(n):
        b = int((to_pt(mid, x) - lo) / w)
        if b < 0:
            b = 0
        elif b >= bins:
            b = bins - 1
        counts[b] += 1.0
        x = map_step(mid, mp, x)
    return counts / (n * w)
