"""Time-stepping kernels for the reflected solver.

Each step of the reference scheme solves the tridiagonal linear
complementarity problem

    M u' = b + dt*m,   u' >= 0,  m >= 0,  u'.m = 0,
    M = I - (dt/2) D2,  b = u + dt*xi,

with D2 the second difference over h^2 and homogeneous Dirichlet data.  M is
a tridiagonal M-matrix, so the LCP has a unique solution.  It is found by a
primal-dual active-set iteration whose inner solve is a Thomas sweep over
the inactive runs ("projected Thomas"); a projected Gauss-Seidel sweep is
kept as a fallback in case the active-set iteration fails to settle.

Two implementations are provided: a numba one (plain loops, jitted when the
numba backend is active, see ``_accel``) and a vectorized numpy one used as
the fallback backend.  Both consume identical pre-generated noise blocks so
trajectories agree across backends up to roundoff.
"""

import numpy as np
from scipy.linalg import solve_banded

from ._accel import jit_or_fallback

PGS_MAX_SWEEPS = 10_000
PGS_TOL = 1e-12
PDAS_MAX_ITERS = 100


# ---------------------------------------------------------------------------
# numba-path kernels (plain-loop style; jitted unless disabled)

@jit_or_fallback(nogil=True)
def _thomas_masked(lo, dg, b, active, u, cp, dp):
    """Solve tridiag(lo,dg,lo) u = b on inactive runs; u = 0 on active sites."""
    n = b.shape[0]
    i = 0
    while i < n:
        if active[i]:
            u[i] = 0.0
            i += 1
            continue
        j = i
        cp[j] = lo / dg
        dp[j] = b[j] / dg
        k = j + 1
        while k < n and not active[k]:
            den = dg - lo * cp[k - 1]
            cp[k] = lo / den
            dp[k] = (b[k] - lo * dp[k - 1]) / den
            k += 1
        u[k - 1] = dp[k - 1]
        for t in range(k - 2, j - 1, -1):
            u[t] = dp[t] - cp[t] * u[t + 1]
        i = k


@jit_or_fallback(nogil=True)
def _pgs_sweeps(lo, dg, b, u):
    """Projected Gauss-Seidel until max update < PGS_TOL; returns sweep count."""
    n = b.shape[0]
    for s in range(PGS_MAX_SWEEPS):
        delta = 0.0
        for i in range(n):
            left = u[i - 1] if i > 0 else 0.0
            right = u[i + 1] if i < n - 1 else 0.0
            new = (b[i] - lo * (left + right)) / dg
            if new < 0.0:
                new = 0.0
            d = abs(new - u[i])
            if d > delta:
                delta = d
            u[i] = new
        if delta < PGS_TOL:
            return s + 1
    return PGS_MAX_SWEEPS


@jit_or_fallback(nogil=True)
def lcp_chunk_loop(u, active, eta, binc, lo, dg, dt, h,
                   probe_idx, out_probe_u, out_probe_eta,
                   out_min_u, out_supp, out_clus, out_maxusupp,
                   u_hist, store_u):
    """Advance ``binc.shape[0]`` LCP steps in place.

    Returns (comp_residual_sum, eq_residual_max, pgs_fallbacks, step_of_failure)
    where step_of_failure is -1 unless both PDAS and PGS failed.
    """
    m_steps, n = binc.shape
    cp = np.empty(n)
    dp = np.empty(n)
    b = np.empty(n)
    w = np.empty(n)
    unew = np.empty(n)
    comp_sum = 0.0
    eq_max = 0.0
    pgs_used = 0
    for s in range(m_steps):
        for i in range(n):
            b[i] = u[i] + binc[s, i]
        settled = False
        for _ in range(PDAS_MAX_ITERS):
            _thomas_masked(lo, dg, b, active, unew, cp, dp)
            for i in range(n):
                left = unew[i - 1] if i > 0 else 0.0
                right = unew[i + 1] if i < n - 1 else 0.0
                w[i] = dg * unew[i] + lo * (left + right) - b[i]
            changed = False
            for i in range(n):
                na = (unew[i] - w[i]) < 0.0
                if na != active[i]:
                    active[i] = na
                    changed = True
            if not changed:
                settled = True
                break
        if not settled:
            # projected Gauss-Seidel fallback from the clamped iterate
            for i in range(n):
                unew[i] = unew[i] if unew[i] > 0.0 else 0.0
            sweeps = _pgs_sweeps(lo, dg, b, unew)
            pgs_used += 1
            if sweeps >= PGS_MAX_SWEEPS:
                return comp_sum, eq_max, pgs_used, s
            for i in range(n):
                left = unew[i - 1] if i > 0 else 0.0
                right = unew[i + 1] if i < n - 1 else 0.0
                w[i] = dg * unew[i] + lo * (left + right) - b[i]
                active[i] = unew[i] <= 0.0 and w[i] > 0.0
        # complementarity bookkeeping before the multiplier is masked
        min_u = np.inf
        supp = 0
        clus = 0
        maxus = 0.0
        prev_idx = -10
        for i in range(n):
            ui = unew[i] if unew[i] > 0.0 else 0.0
            wi = w[i]
            if wi > 0.0:
                comp_sum += ui * wi * h  # * dt/dt: m = w/dt, increment m*dt
            if not active[i]:
                aw = abs(wi)
                if aw > eq_max:
                    eq_max = aw
            if active[i] and wi > 0.0:
                eta[i] += wi  # ledger increment m*dt = w
                supp += 1
                if i - prev_idx > 2:
                    clus += 1
                prev_idx = i
                if ui > maxus:
                    maxus = ui
            u[i] = ui
            if ui < min_u:
                min_u = ui
        out_min_u[s] = min_u
        out_supp[s] = supp
        out_clus[s] = clus
        out_maxusupp[s] = maxus
        for p in range(probe_idx.shape[0]):
            out_probe_u[s, p] = u[probe_idx[p]]
            out_probe_eta[s, p] = eta[probe_idx[p]]
        if store_u:
            for i in range(n):
                u_hist[s, i] = u[i]
    return comp_sum, eq_max, pgs_used, -1


@jit_or_fallback(nogil=True)
def penalized_chunk_loop(u, eta, binc, lo, dg, dt, h, delta,
                         probe_idx, out_probe_u, out_probe_eta,
                         out_min_u, out_supp, out_clus, out_maxusupp,
                         u_hist, store_u):
    """Explicit-penalty / implicit-diffusion steps; state may dip negative.

    Returns (clamp_count, max_deficit): how often and how far the raw state
    went below -1e-12.  Stored values (probes, history) are the raw state;
    snapshot clamping happens in the driver.
    """
    m_steps, n = binc.shape
    cp = np.empty(n)
    dp = np.empty(n)
    b = np.empty(n)
    unew = np.empty(n)
    no_mask = np.zeros(n, dtype=np.bool_)
    clamp_count = 0
    max_deficit = 0.0
    for s in range(m_steps):
        for i in range(n):
            pen = -u[i] if u[i] < 0.0 else 0.0
            b[i] = u[i] + binc[s, i] + dt * pen / delta
        _thomas_masked(lo, dg, b, no_mask, unew, cp, dp)
        min_u = np.inf
        supp = 0
        clus = 0
        prev_idx = -10
        for i in range(n):
            ui = unew[i]
            if ui < -1e-12:
                clamp_count += 1
                if -ui > max_deficit:
                    max_deficit = -ui
            inc = (-ui if ui < 0.0 else 0.0) * dt / delta
            if inc > 0.0:
                eta[i] += inc
                supp += 1
                if i - prev_idx > 2:
                    clus += 1
                prev_idx = i
            u[i] = ui
            if ui < min_u:
                min_u = ui
        out_min_u[s] = min_u
        out_supp[s] = supp
        out_clus[s] = clus
        out_maxusupp[s] = 0.0
        for p in range(probe_idx.shape[0]):
            out_probe_u[s, p] = u[probe_idx[p]]
            out_probe_eta[s, p] = eta[probe_idx[p]]
        if store_u:
            for i in range(n):
                u_hist[s, i] = u[i]
    return clamp_count, max_deficit


# ---------------------------------------------------------------------------
# numpy-path kernels (vectorized; scipy banded solves)

def _banded_masked(lo, dg, b, active):
    """Vectorized counterpart of _thomas_masked using solve_banded."""
    n = b.shape[0]
    ab = np.empty((3, n))
    ab[0] = lo
    ab[1] = dg
    ab[2] = lo
    rhs = np.where(active, 0.0, b)
    ab[1, active] = 1.0
    idx = np.nonzero(active)[0]
    up = idx + 1
    ab[0, up[up < n]] = 0.0       # A[i, i+1] = 0 for active i
    dn = idx - 1
    ab[2, dn[dn >= 0]] = 0.0      # A[i, i-1] = 0 for active i
    return solve_banded((1, 1), ab, rhs)


def _pgs_redblack(lo, dg, b, u):
    n = b.shape[0]
    even = np.arange(0, n, 2)
    odd = np.arange(1, n, 2)
    ext = np.empty(n + 2)
    for s in range(PGS_MAX_SWEEPS):
        delta = 0.0
        for color in (even, odd):
            ext[0] = 0.0
            ext[-1] = 0.0
            ext[1:-1] = u
            new = (b[color] - lo * (ext[color] + ext[color + 2])) / dg
            np.clip(new, 0.0, None, out=new)
            d = np.max(np.abs(new - u[color])) if color.size else 0.0
            delta = max(delta, d)
            u[color] = new
        if delta < PGS_TOL:
            return s + 1
    return PGS_MAX_SWEEPS


def _apply_m(lo, dg, u):
    out = dg * u
    out[:-1] += lo * u[1:]
    out[1:] += lo * u[:-1]
    return out


def lcp_chunk_numpy(u, active, eta, binc, lo, dg, dt, h,
                    probe_idx, out_probe_u, out_probe_eta,
                    out_min_u, out_supp, out_clus, out_maxusupp,
                    u_hist, store_u):
    m_steps, n = binc.shape
    comp_sum = 0.0
    eq_max = 0.0
    pgs_used = 0
    for s in range(m_steps):
        b = u + binc[s]
        settled = False
        for _ in range(PDAS_MAX_ITERS):
            unew = _banded_masked(lo, dg, b, active)
            w = _apply_m(lo, dg, unew) - b
            new_active = (unew - w) < 0.0
            if np.array_equal(new_active, active):
                settled = True
                break
            active[:] = new_active
        if not settled:
            unew = np.clip(unew, 0.0, None)
            sweeps = _pgs_redblack(lo, dg, b, unew)
            pgs_used += 1
            if sweeps >= PGS_MAX_SWEEPS:
                return comp_sum, eq_max, pgs_used, s
            w = _apply_m(lo, dg, unew) - b
            active[:] = (unew <= 0.0) & (w > 0.0)
        unew = np.clip(unew, 0.0, None)
        wpos = np.clip(w, 0.0, None)
        comp_sum += float(np.dot(unew, wpos)) * h
        inact = ~active
        if inact.any():
            eq_max = max(eq_max, float(np.max(np.abs(w[inact]))))
        push = active & (w > 0.0)
        eta[push] += w[push]
        idx = np.nonzero(push)[0]
        out_supp[s] = idx.size
        out_clus[s] = (1 + int(np.sum(np.diff(idx) > 2))) if idx.size else 0
        out_maxusupp[s] = float(unew[idx].max()) if idx.size else 0.0
        u[:] = unew
        out_min_u[s] = float(u.min())
        out_probe_u[s] = u[probe_idx]
        out_probe_eta[s] = eta[probe_idx]
        if store_u:
            u_hist[s] = u
    return comp_sum, eq_max, pgs_used, -1


def penalized_chunk_numpy(u, eta, binc, lo, dg, dt, h, delta,
                          probe_idx, out_probe_u, out_probe_eta,
                          out_min_u, out_supp, out_clus, out_maxusupp,
                          u_hist, store_u):
    m_steps, n = binc.shape
    ab = np.empty((3, n))
    ab[0] = lo
    ab[1] = dg
    ab[2] = lo
    clamp_count = 0
    max_deficit = 0.0
    for s in range(m_steps):
        b = u + binc[s] + (dt / delta) * np.clip(-u, 0.0, None)
        unew = solve_banded((1, 1), ab, b)
        deficit = np.clip(-unew, 0.0, None)
        bad = deficit > 1e-12
        clamp_count += int(np.count_nonzero(bad))
        if bad.any():
            max_deficit = max(max_deficit, float(deficit.max()))
        inc = (dt / delta) * deficit
        push = inc > 0.0
        eta[push] += inc[push]
        idx = np.nonzero(push)[0]
        out_supp[s] = idx.size
        out_clus[s] = (1 + int(np.sum(np.diff(idx) > 2))) if idx.size else 0
        out_maxusupp[s] = 0.0
        u[:] = unew
        out_min_u[s] = float(u.min())
        out_probe_u[s] = u[probe_idx]
        out_probe_eta[s] = eta[probe_idx]
        if store_u:
            u_hist[s] = u
    return clamp_count, max_deficit


# ---------------------------------------------------------------------------
# reflected Brownian path ensembles (1d Skorohod baseline)

@jit_or_fallback(nogil=True)
def skorohod_block_loop(B, M, occ, noise, x0, sqdt, eps):
    """Advance every path by noise.shape[0] steps, accumulating band counts.

    B: running driver value per path; M: running max of -(x0+B);
    occ[j, p]: count of steps with reflected value < eps[j].
    """
    m_steps, n_paths = noise.shape
    n_eps = eps.shape[0]
    for s in range(m_steps):
        for p in range(n_paths):
            b = B[p] + sqdt * noise[s, p]
            B[p] = b
            neg = -(x0 + b)
            if neg > M[p]:
                M[p] = neg
            L = M[p] if M[p] > 0.0 else 0.0
            X = x0 + b + L
            for j in range(n_eps):
                if X < eps[j]:
                    occ[j, p] += 1.0


def skorohod_block_numpy(B, M, occ, noise, x0, sqdt, eps):
    m_steps = noise.shape[0]
    for s in range(m_steps):
        B += sqdt * noise[s]
        np.maximum(M, -(x0 + B), out=M)
        X = x0 + B + np.clip(M, 0.0, None)
        for j in range(eps.shape[0]):
            occ[j] += X < eps[j]
