"""Reproducible Gaussian samplers.

All randomness flows through :class:`RngStream`: a (seed, stream_id) pair
mapped to a numpy ``Generator``.  Same pair, same draws, bit for bit;
distinct stream ids give statistically independent streams.

Conventions
-----------
* Scalar/3d Brownian bridges are sampled by sequential conditioning of a
  random-walk bridge, which is exact for the grid marginals: the site
  covariance is exactly ``theta_i /\\ theta_j - theta_i theta_j`` per
  component.
* Spectral samplers use the orthonormal sine basis; mode k carries the
  continuum rate ``lambda_k = (k pi)^2 / 2`` and stationary variance
  ``1/(k pi)^2``.  The number of modes defaults to the number of grid sites
  (the resolvable bandwidth).
* White-noise increments are cell averages over one space-time cell, i.i.d.
  N(0, 1/(h*dt)).
"""

from dataclasses import dataclass

import numpy as np

from .grids import ScalarField, SpaceTimeGrid, VectorField3, sine_matrix


@dataclass(frozen=True)
class RngStream:
    """Seed plus stream id; the unit of reproducibility.

    Workers must not share a stream: give each replica its own stream_id.
    """

    seed: int
    stream_id: int = 0

    def generator(self):
        return np.random.default_rng((self.seed, self.stream_id))

    def substream(self, k):
        return RngStream(self.seed, self.stream_id * 1_000_003 + k)


def _bridge_batch(n_sites, n_draws, ncomp, gen):
    """Sequentially conditioned random-walk bridge pinned to 0 at both ends.

    Returns array (n_draws, n_sites, ncomp).  Exact grid marginals.
    """
    h = 1.0 / (n_sites + 1)
    out = np.empty((n_draws, n_sites, ncomp))
    x = np.zeros((n_draws, ncomp))
    for i in range(1, n_sites + 1):
        tau = 1.0 - (i - 1) * h
        x = x * ((tau - h) / tau) + np.sqrt(h * (tau - h) / tau) * gen.standard_normal(
            (n_draws, ncomp)
        )
        out[:, i - 1, :] = x
    return out


def sample_brownian_bridge_3d(grid: SpaceTimeGrid, rng: RngStream) -> VectorField3:
    """One draw of a standard 3d Brownian bridge on the grid sites."""
    vals = _bridge_batch(grid.n_sites, 1, 3, rng.generator())[0]
    return VectorField3(grid, vals)


def sample_bessel3_bridge(grid: SpaceTimeGrid, rng: RngStream) -> ScalarField:
    """One draw of the sitewise modulus of a 3d Brownian bridge (>= 0)."""
    return sample_brownian_bridge_3d(grid, rng).modulus()


def bessel3_bridge_batch(grid: SpaceTimeGrid, n_draws, rng: RngStream):
    """(n_draws, n_sites) array of modulus-bridge draws; estimator workhorse."""
    vals = _bridge_batch(grid.n_sites, n_draws, 3, rng.generator())
    return np.linalg.norm(vals, axis=2)


def sample_white_noise_increment(grid: SpaceTimeGrid, dt, rng: RngStream,
                                 vector=False):
    """Cell averages of space-time white noise over one time step.

    Each interior site owns a cell of width h; the cell average of the mixed
    derivative of the sheet over one (h, dt) cell is N(0, 1/(h*dt)), cells
    independent.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    gen = rng.generator()
    sig = np.sqrt(1.0 / (grid.h * dt))
    if vector:
        return VectorField3(grid, sig * gen.standard_normal((grid.n_sites, 3)))
    return ScalarField(grid, sig * gen.standard_normal(grid.n_sites))


def mode_rates(n_modes, dt=None, discrete_h=None):
    """Continuum mode rates lambda_k, or the discrete-Laplacian rates when
    ``discrete_h`` is given (used to mirror the finite-difference solver)."""
    k = np.arange(1, n_modes + 1)
    if discrete_h is None:
        return 0.5 * (k * np.pi) ** 2
    return (2.0 / discrete_h**2) * np.sin(k * np.pi * discrete_h / 2.0) ** 2


def string_transition(xbar: VectorField3, t, rng: RngStream, n_modes=None) -> VectorField3:
    """Exact transition of the R^3-valued string over time t.

    The conditional law given the start is Gaussian with mean the
    heat-semigroup image of the start; in sine coordinates every mode is an
    independent OU update with decay exp(-k^2 pi^2 t / 2) and stationary
    variance 1/(k^2 pi^2).
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    grid = xbar.grid
    n = grid.n_sites
    K = n if n_modes is None else min(n_modes, n)
    S = sine_matrix(n, K)
    lam = mode_rates(K)
    decay = np.exp(-lam * t)
    sd = np.sqrt((1.0 - decay**2) / (2.0 * lam))
    coeff = grid.h * (S @ xbar.values)            # (K, 3)
    gen = rng.generator()
    coeff = decay[:, None] * coeff + sd[:, None] * gen.standard_normal((K, 3))
    return VectorField3(grid, S.T @ coeff)


def stochastic_convolution_path(grid: SpaceTimeGrid, dt, n_steps, rng: RngStream,
                                n_modes=None, scheme="exact_ou", snapshot_stride=1):
    """Path of the zero-start stochastic convolution, one field per stored step.

    ``scheme="exact_ou"`` uses exact per-mode transitions (no time
    discretization bias); ``scheme="implicit_fd"`` reproduces the implicit
    finite-difference recursion mode by mode.  Returns (times, fields) with
    ``fields[j]`` the grid values at ``times[j]``; row 0 is t=0 (all zero).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    n = grid.n_sites
    K = n if n_modes is None else min(n_modes, n)
    S = sine_matrix(n, K)
    decay, gain_exact = _conv_coefficients(K, dt, scheme, grid.h)
    gen = rng.generator()
    c = np.zeros(K)
    rows = [np.zeros(n)]
    times = [0.0]
    for s in range(1, n_steps + 1):
        z = gen.standard_normal(K)
        c = decay * c + gain_exact * z
        if s % snapshot_stride == 0 or s == n_steps:
            rows.append(S.T @ c)
            times.append(s * dt)
    return np.asarray(times), np.asarray(rows)


def _conv_coefficients(K, dt, scheme, h):
    lam_c = mode_rates(K)
    if scheme == "exact_ou":
        decay = np.exp(-lam_c * dt)
        sd = np.sqrt((1.0 - decay**2) / (2.0 * lam_c))
        return decay, sd
    if scheme == "implicit_fd":
        lam_d = mode_rates(K, discrete_h=h)
        decay = 1.0 / (1.0 + dt * lam_d)
        # driven by a unit-variance mode increment scaled to sqrt(dt)
        return decay, decay * np.sqrt(dt)
    raise ValueError(f"unknown convolution scheme {scheme!r}")


def spectral_bridge_modes(n_modes, n_draws, rng: RngStream):
    """Sine coefficients of mu_3 draws: c_k ~ N(0, 1/(k pi)^2), 3 components.

    Used by the potential-theory Monte Carlo, where evaluation happens in
    mode space and the bandwidth can exceed any grid.
    """
    k = np.arange(1, n_modes + 1)
    sd = 1.0 / (k * np.pi)
    gen = rng.generator()
    return sd[None, :, None] * gen.standard_normal((n_draws, n_modes, 3))
