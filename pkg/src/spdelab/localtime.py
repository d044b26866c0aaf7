"""Occupation, local-time and boundary estimators over solver trajectories.

All estimators are pure functions of a Trajectory: they read the per-step
probe series (full dt resolution) and the reflection ledger.  Bands are
half-open [a, a+eps): the lower edge is included (the reflected field sits
at 0 for whole steps), the upper edge is open so that level-grid bins
partition and the occupation-times identity is exact for piecewise-constant
integrands.

Band estimators are trustworthy only when many steps resolve a band
sojourn; sojourn durations scale like eps^2, so a ResolutionWarning is
emitted unless dt <= 0.1 * eps^2.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .reflected import Trajectory

DT_BAND_FACTOR = 0.1


class ResolutionWarning(UserWarning):
    """Time step too coarse to resolve sojourns in the requested band."""


def _probe(traj: Trajectory, theta):
    return traj.probe_series(theta)[1:]   # occupancy of (0, T], n_steps values


def _steps_window(traj, t_lo, t_hi):
    dt = traj.grid.dt
    n = traj.grid.n_steps
    if t_hi is None:
        t_hi = traj.grid.T
    if not (0.0 <= t_lo < t_hi <= traj.grid.T + 1e-12):
        raise ValueError(f"bad window [{t_lo}, {t_hi}]")
    i0 = int(round(t_lo / dt))
    i1 = min(int(round(t_hi / dt)), n)
    return i0, i1


def _check_band_resolution(traj, eps):
    if traj.grid.dt > DT_BAND_FACTOR * eps * eps:
        warnings.warn(
            f"dt={traj.grid.dt} too coarse for band width {eps}: need "
            f"dt <= {DT_BAND_FACTOR}*eps^2 = {DT_BAND_FACTOR*eps*eps:.2e}",
            ResolutionWarning, stacklevel=3)


@dataclass(frozen=True)
class OccupationEstimate:
    """Band occupation (1/eps) * time u spends in [a, a+eps) on (t_lo, t_hi]."""

    theta: float
    a: float
    eps: float
    value: float
    t_lo: float
    t_hi: float

    @property
    def raw_occupation(self):
        return self.value * self.eps


def occupation_band(traj: Trajectory, theta, a, eps, t_lo=0.0, t_hi=None):
    if a < 0:
        raise ValueError(f"level a must be >= 0, got {a}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    u = _probe(traj, theta)
    i0, i1 = _steps_window(traj, t_lo, t_hi)
    seg = u[i0:i1]
    occ = float(np.count_nonzero((seg >= a) & (seg < a + eps))) * traj.grid.dt
    return OccupationEstimate(theta=theta, a=a, eps=eps, value=occ / eps,
                              t_lo=t_lo, t_hi=i1 * traj.grid.dt)


@dataclass(frozen=True)
class RenormalizedEstimate:
    """(3/eps^3) * occupation of [0, eps); estimates the renormalized local time."""

    theta: float
    eps: float
    value: float


def renormalized_local_time(traj: Trajectory, theta, eps, t_lo=0.0, t_hi=None):
    _check_band_resolution(traj, eps)
    band = occupation_band(traj, theta, 0.0, eps, t_lo, t_hi)
    return RenormalizedEstimate(theta=theta, eps=eps,
                                value=3.0 / eps**3 * band.raw_occupation)


def eta_density_check(traj: Trajectory, theta, eps, floor=1e-12):
    """Ratio of the ledger at T to one quarter of the renormalized estimate.

    Returns nan (inconclusive) when both sides sit below ``floor``, e.g. on
    a deterministic run that never touches zero.
    """
    eta_T = float(traj.probe_eta_series(theta)[-1])
    ren = renormalized_local_time(traj, theta, eps).value
    if eta_T < floor and ren < floor:
        return float("nan")
    return eta_T / (0.25 * ren) if ren > 0 else float("inf")


def small_level_rescale(traj: Trajectory, theta, a, band_eps):
    """a^{-2} times the band occupation around level a (band centered at a).

    The band midpoint sits at the probed level so the estimate tracks the
    local-time Revuz density curve at a; with a = 0 the call routes to the
    level-zero check (1/eps) * occupation of [0, eps), which must vanish as
    eps -> 0.
    """
    if a < 0:
        raise ValueError(f"a must be >= 0, got {a}")
    _check_band_resolution(traj, band_eps)
    if a == 0:
        return occupation_band(traj, theta, 0.0, band_eps).value
    lo = max(a - band_eps / 2.0, 0.0)
    band = occupation_band(traj, theta, lo, band_eps)
    return band.value / (a * a)


def occupation_formula_residual(traj: Trajectory, theta, F, level_grid):
    """Relative residual of the occupation-times identity for F.

    ``level_grid`` holds the left edges of an increasing, contiguous bin
    partition [a_j, a_{j+1}) that must span the range of u at theta; the
    last bin gets the same width as its predecessor.  F is evaluated at the
    left edges (matching the band definition), so piecewise-constant F on
    the bins gives a residual at roundoff.
    """
    grid = np.asarray(level_grid, dtype=np.float64)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("level_grid must be increasing with >= 2 edges")
    u = _probe(traj, theta)
    dt = traj.grid.dt
    top = grid[-1] + (grid[-1] - grid[-2])
    if u.min() < grid[0] or u.max() >= top:
        raise ValueError(
            f"level_grid [{grid[0]}, {top}) does not span the field range "
            f"[{u.min()}, {u.max()}]")
    left = float(np.sum(F(u))) * dt
    edges = np.append(grid, top)
    counts, _ = np.histogram(u, bins=edges)
    right = float(np.dot(F(grid), counts)) * dt
    denom = abs(left)
    return abs(left - right) / denom if denom > 0 else abs(left - right)


def boundary_functional(traj: Trajectory, eps, a_cut, side="left"):
    """sqrt(eps)-rescaled cutoff integral of the ledger near one boundary.

    sqrt(eps) * sum_{theta_i < a_cut} min(1, theta_i/eps) eta_i(T) h for the
    left side; mirrored for the right.  Rejects eps below twice the grid
    spacing (the ramp would be invisible).
    """
    g = traj.grid
    if not (0.0 < eps < a_cut < 1.0):
        raise ValueError("need 0 < eps < a_cut < 1")
    if eps < 2.0 * g.h:
        raise ValueError(f"eps={eps} below grid resolution 2h={2*g.h}")
    th = g.thetas
    eta = traj.eta_final
    if side == "left":
        sel = th < a_cut
        w = np.minimum(1.0, th[sel] / eps)
    elif side == "right":
        sel = th > 1.0 - a_cut
        w = np.minimum(1.0, (1.0 - th[sel]) / eps)
    else:
        raise ValueError(f"unknown side {side!r}")
    return float(np.sqrt(eps) * np.sum(w * eta[sel]) * g.h)


@dataclass(frozen=True)
class DecompositionStats:
    """Per-step support structure of the reflection increments."""

    steps_with_mass: int
    max_u_on_support: float
    single_cluster_fraction: float
    cluster_counts: np.ndarray   # histogram over cluster count (index = count)


def check_decomposition(traj: Trajectory, tol_zero=1e-10):
    """Supports of ledger increments: the field there must sit at zero, and
    the support should concentrate in few site clusters (gap > 2 sites
    separates clusters)."""
    mass = traj.step_support_count > 0
    n_mass = int(np.count_nonzero(mass))
    max_u = float(traj.step_max_u_on_support.max()) if mass.any() else 0.0
    if max_u > tol_zero:
        warnings.warn(f"field value {max_u} on a reflection support exceeds "
                      f"tol_zero={tol_zero}", UserWarning, stacklevel=2)
    clus = traj.step_cluster_count[mass]
    single = float(np.mean(clus == 1)) if n_mass else 0.0
    counts = np.bincount(clus) if n_mass else np.zeros(1, dtype=np.int64)
    return DecompositionStats(steps_with_mass=n_mass, max_u_on_support=max_u,
                              single_cluster_fraction=single,
                              cluster_counts=counts)


@dataclass(frozen=True)
class ZeroSetStats:
    """How often the field touches zero and how the touch times spread."""

    tol: float
    fraction_time_touching: float
    gaps: np.ndarray         # time gaps between consecutive touching steps
    gap_histogram: tuple     # (counts, bin_edges)


def zero_set_stats(traj: Trajectory, tol):
    if not tol >= 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    touching = traj.step_min_u <= tol
    frac = float(np.mean(touching))
    idx = np.nonzero(touching)[0]
    gaps = np.diff(idx) * traj.grid.dt if idx.size > 1 else np.empty(0)
    hist = np.histogram(gaps, bins=10) if gaps.size else (np.zeros(10, int),
                                                          np.linspace(0, 1, 11))
    return ZeroSetStats(tol=tol, fraction_time_touching=frac, gaps=gaps,
                        gap_histogram=hist)
