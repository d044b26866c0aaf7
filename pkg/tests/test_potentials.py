import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import ortho_group

from spdelab.grids import SpaceTimeGrid, VectorField3
from spdelab.potentials import (PotentialQuery, boundary_surrogate,
                                build_time_quadrature, gamma3, gamma3_batch,
                                marginal_cdf, marginal_density,
                                mean_norm_noncentral, revuz_targets,
                                u3_directional_derivative, u3_potential)
from spdelab.sampling import (RngStream, sample_brownian_bridge_3d,
                              spectral_bridge_modes)

SEED = 54321
SQRT_8_OVER_PI = math.sqrt(8 / math.pi)

# frozen oracles
U3_ZERO_HALF = 0.814880918477386      # mpmath, u substitution, 30 digits
M_AT_1 = 1.8493204333124584           # E|Z + e| by independent 1d quadrature
M_AT_3 = 3.333197709946343


def test_mean_norm_noncentral_values():
    assert mean_norm_noncentral(0.0) == pytest.approx(SQRT_8_OVER_PI, abs=1e-12)
    assert mean_norm_noncentral(1.0) == pytest.approx(M_AT_1, abs=1e-10)
    assert mean_norm_noncentral(3.0) == pytest.approx(M_AT_3, abs=1e-10)
    # large-mu asymptote: mu + 1/mu (up to O(mu^-3))
    assert mean_norm_noncentral(40.0) == pytest.approx(40.0 + 1 / 40.0, abs=1e-4)
    arr = mean_norm_noncentral(np.array([[0.0, 1.0], [3.0, 40.0]]))
    assert arr.shape == (2, 2)
    assert arr[0, 1] == pytest.approx(M_AT_1, abs=1e-10)


def test_u3_frozen_value_and_quadrature_convergence():
    q = PotentialQuery(theta=0.5, a=[0, 0, 0])
    assert u3_potential(q) == pytest.approx(U3_ZERO_HALF, abs=1e-9)
    dense = build_time_quadrature(u_min=1e-4, ratio=1.5, nodes_per_panel=24)
    qd = PotentialQuery(theta=0.5, a=[0, 0, 0], quadrature=dense)
    assert u3_potential(qd) == pytest.approx(U3_ZERO_HALF, abs=1e-9)


def test_u3_band_average_mc_oracle():
    """Richardson-extrapolated small-ball averages (independent Monte Carlo
    over the resolvent's time variable with the exact Gaussian ball
    probability) reproduce the potential at a = 0."""
    gen = np.random.default_rng(SEED)
    ts = gen.exponential(size=30_000)
    qts = np.array([_q_diag_images(t) for t in ts])
    omega3 = 4 * math.pi / 3

    def band_value(eps):
        vals = maxwell_cdf_vec(eps, qts) / (omega3 * eps**3)
        return vals.mean(), vals.std(ddof=1) / math.sqrt(vals.size)

    v2, se2 = band_value(0.2)
    v1, se1 = band_value(0.1)
    extrap = 2 * v1 - v2     # the potential has a linear |a|-kink at 0
    se = math.sqrt((2 * se1) ** 2 + se2**2)
    assert abs(extrap - U3_ZERO_HALF) <= 3 * se + 0.03 * U3_ZERO_HALF


def _q_diag_images(t, theta=0.5):
    from spdelab.kernels import q_kernel
    return q_kernel(t, theta, theta)


def maxwell_cdf_vec(x, s):
    from scipy.special import erf
    sig = np.sqrt(s)
    return (erf(x / (sig * math.sqrt(2)))
            - math.sqrt(2 / math.pi) * (x / sig) * np.exp(-x * x / (2 * s)))


def test_u3_rotation_invariance():
    g = SpaceTimeGrid(31, 1e-3, 1e-3)
    xbar = sample_brownian_bridge_3d(g, RngStream(SEED, 1))
    a = np.array([0.4, -0.2, 0.1])
    base = u3_potential(PotentialQuery(theta=0.5, a=a, xbar=xbar))
    gen = np.random.default_rng(SEED)
    for _ in range(4):
        R = ortho_group.rvs(3, random_state=gen)
        rot = u3_potential(PotentialQuery(theta=0.5, a=R @ a,
                                          xbar=VectorField3(g, xbar.values @ R.T)))
        assert rot == pytest.approx(base, abs=1e-10)


def test_u3_continuity_in_a():
    g = SpaceTimeGrid(31, 1e-3, 1e-3)
    xbar = sample_brownian_bridge_3d(g, RngStream(SEED, 2))
    a0 = np.array([0.3, 0.1, -0.2])
    base = u3_potential(PotentialQuery(theta=0.4, a=a0, xbar=xbar))
    gaps = []
    for d in (0.08, 0.04, 0.02):
        v = u3_potential(PotentialQuery(theta=0.4, a=a0 + [d, 0, 0], xbar=xbar))
        gaps.append(abs(v - base))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[1] <= 0.62 * gaps[0]   # halving the offset ~halves the gap


def test_directional_derivative_fd_linearity_and_null():
    g = SpaceTimeGrid(63, 1e-3, 1e-3)
    xbar = sample_brownian_bridge_3d(g, RngStream(SEED, 3))
    h1 = sample_brownian_bridge_3d(g, RngStream(SEED, 4))
    h2 = sample_brownian_bridge_3d(g, RngStream(SEED, 5))
    q = PotentialQuery(theta=0.5, a=[0.2, 0.0, -0.4], xbar=xbar)
    d1 = u3_directional_derivative(q, h1)
    d2 = u3_directional_derivative(q, h2)
    both = u3_directional_derivative(q, VectorField3(g, h1.values + h2.values))
    assert both == pytest.approx(d1 + d2, abs=1e-12)
    # direction odd about the midpoint evaluates to zero at theta = 1/2
    odd = np.sin(2 * np.pi * g.thetas)[:, None] * np.array([[1.0, -0.5, 2.0]])
    d_odd = u3_directional_derivative(q, VectorField3(g, odd))
    assert abs(d_odd) < 1e-12
    # central finite differences
    delta = 1e-4
    up = PotentialQuery(theta=0.5, a=q.a, xbar=VectorField3(g, xbar.values + delta * h1.values))
    dn = PotentialQuery(theta=0.5, a=q.a, xbar=VectorField3(g, xbar.values - delta * h1.values))
    fd = (u3_potential(up) - u3_potential(dn)) / (2 * delta)
    assert d1 == pytest.approx(fd, rel=1e-4)


def test_gamma3_zero_field_closed_reduction():
    # at xbar = 0 the angular mean is sqrt(8/pi): gamma3 reduces to the
    # resolvent integral of sqrt(q_t/theta); cross-check by direct quadrature
    from spdelab.kernels import q_kernel
    for th in (0.5, 0.2):
        direct, _ = quad(lambda t: math.exp(-t)
                         * math.sqrt(q_kernel(max(t, 1e-300), th, th) / th)
                         * SQRT_8_OVER_PI, 0, 30, limit=300)
        assert gamma3(None, th) == pytest.approx(direct, rel=1e-6)


def test_gamma3_batch_matches_single():
    g = SpaceTimeGrid(63, 1e-3, 1e-3)
    xbar = sample_brownian_bridge_3d(g, RngStream(SEED, 6))
    single = gamma3(xbar, 0.3)
    from spdelab.grids import sine_matrix
    S = sine_matrix(g.n_sites)
    modes = (g.h * (S @ xbar.values))[None, :, :]
    batch = gamma3_batch(modes, 0.3)
    assert batch[0] == pytest.approx(single, rel=1e-10)


def test_gamma3_mean_matches_c_theta():
    for th, rel in ((0.5, None), (0.1, None)):
        modes = spectral_bridge_modes(499, 800, RngStream(SEED, 7))
        vals = gamma3_batch(modes, th)
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        c_theta = math.sqrt(1 - th) * SQRT_8_OVER_PI
        assert abs(vals.mean() - c_theta) <= 3 * se


def test_marginal_density_properties():
    total, _ = quad(lambda a: marginal_density(0.3, a), 0, np.inf)
    assert total == pytest.approx(1.0, abs=1e-8)
    assert marginal_density(0.7, 0.0) == 0.0
    mean, _ = quad(lambda a: a * marginal_density(0.5, a), 0, np.inf)
    assert mean == pytest.approx(0.5 * SQRT_8_OVER_PI, abs=1e-10)
    # quadratic vanishing at 0: log-log slope of the density near zero
    av = np.array([1e-3, 2e-3, 4e-3])
    dv = np.array([marginal_density(0.5, a) for a in av])
    slope = np.polyfit(np.log(av), np.log(dv), 1)[0]
    assert slope == pytest.approx(2.0, abs=1e-3)
    assert marginal_cdf(0.5, 1e9) == pytest.approx(1.0, abs=1e-12)


def test_revuz_targets_and_ratio():
    t = revuz_targets(0.5, interval=(0.25, 0.75))
    assert t.eta_density_mass == pytest.approx(1.5957691216057308, abs=1e-12)
    assert t.l_mass == pytest.approx(4 * t.eta_density_mass, abs=1e-12)
    assert t.interval_mass == pytest.approx(0.9213177319235613, abs=1e-7)
    for th in (0.1, 0.37, 0.93):
        tt = revuz_targets(th)
        assert tt.l_mass == pytest.approx(4 * tt.eta_density_mass, abs=1e-12)
    with pytest.raises(ValueError):
        revuz_targets(0.5, interval=(0.0, 0.5))
    with pytest.raises(ValueError):
        revuz_targets(1.5)


def test_boundary_surrogate_closed_form():
    # with cutoff 1/2 the surrogate has the closed form sqrt(2/pi) sqrt(1-eps)
    for eps in (0.1, 0.05, 0.025, 1e-3):
        v = boundary_surrogate(eps, 0.5)
        assert v == pytest.approx(math.sqrt(2 / math.pi) * math.sqrt(1 - eps),
                                  abs=1e-9)
    w = boundary_surrogate(0.05, 0.5, side="right")
    assert w == pytest.approx(boundary_surrogate(0.05, 0.5), abs=1e-9)
    with pytest.raises(ValueError):
        boundary_surrogate(0.6, 0.5)


def test_unibo_rescaled_bound_uniform():
    g = SpaceTimeGrid(31, 1e-3, 1e-3)
    xbar = sample_brownian_bridge_3d(g, RngStream(SEED, 8))
    vals = []
    for th in (0.05, 0.3, 0.5, 0.9):
        for anorm in (0.0, 1.0):
            q = PotentialQuery(theta=th, a=[anorm, 0, 0], xbar=xbar)
            vals.append((th * (1 - th)) ** 1.5 * u3_potential(q))
    assert max(vals) < 0.2   # uniform in theta and a
