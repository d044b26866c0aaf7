import math

import numpy as np
import pytest
from scipy.stats import ks_2samp, kstest

from spdelab.grids import SpaceTimeGrid, VectorField3
from spdelab.potentials import marginal_cdf
from spdelab.sampling import (RngStream, bessel3_bridge_batch,
                              sample_bessel3_bridge,
                              sample_brownian_bridge_3d,
                              sample_white_noise_increment,
                              spectral_bridge_modes,
                              stochastic_convolution_path, string_transition)

SEED = 913


def test_reproducibility_bit_identical():
    g = SpaceTimeGrid(31, 1e-3, 0.1)
    a = sample_brownian_bridge_3d(g, RngStream(5, 7)).values
    b = sample_brownian_bridge_3d(g, RngStream(5, 7)).values
    c = sample_brownian_bridge_3d(g, RngStream(5, 8)).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_bridge_grid_covariance():
    g = SpaceTimeGrid(15, 1e-3, 0.1)
    n = 40_000
    draws = np.stack([_batch3(g, n)])[0]
    i, j = g.site_of(0.5), g.site_of(0.25)
    # per-component variance and cross-covariance match min - product
    v = draws[:, i, 0].var(ddof=1)
    assert v == pytest.approx(0.25, rel=0.04)
    cov = np.mean(draws[:, i, 1] * draws[:, j, 1])
    assert cov == pytest.approx(0.25 - 0.125, rel=0.08)
    sq = np.sum(draws[:, g.site_of(0.3125), :] ** 2, axis=1).mean()
    assert sq == pytest.approx(3 * 0.3125 * (1 - 0.3125), rel=0.04)


def _batch3(g, n):
    from spdelab.sampling import _bridge_batch
    return _bridge_batch(g.n_sites, n, 3, RngStream(SEED, 1).generator())


def test_bessel_bridge_nonnegative_and_mean():
    g = SpaceTimeGrid(127, 1e-3, 0.1)
    vals = bessel3_bridge_batch(g, 50_000, RngStream(SEED, 2))
    assert vals.min() >= 0.0
    mid = vals[:, g.site_of(0.5)]
    se = mid.std(ddof=1) / math.sqrt(mid.size)
    assert abs(mid.mean() - math.sqrt(8 / math.pi) / 2) <= 3 * se


def test_bessel_bridge_marginal_ks():
    g = SpaceTimeGrid(127, 1e-3, 0.1)
    vals = bessel3_bridge_batch(g, 50_000, RngStream(SEED, 3))
    mid = vals[:, g.site_of(0.5)]
    ks = kstest(mid, lambda x: marginal_cdf(0.5, x))
    assert ks.statistic < 1.628 / math.sqrt(mid.size)


def test_image_measure_commutation():
    # modulus of a 3d draw vs modulus-sampler output: same law at theta=0.5
    g = SpaceTimeGrid(63, 1e-3, 0.1)
    n = 30_000
    a = np.linalg.norm(_batch3(g, n)[:, g.site_of(0.5), :], axis=1)
    b = bessel3_bridge_batch(g, n, RngStream(SEED, 4))[:, g.site_of(0.5)]
    ks = ks_2samp(a, b)
    assert ks.pvalue > 0.01


def test_bridge_endpoint_pinning():
    # the last site value stays within the conditional scale h/2
    g = SpaceTimeGrid(63, 1e-3, 0.1)
    f = sample_bessel3_bridge(g, RngStream(SEED, 5))
    assert f.values[-1] < 6 * math.sqrt(g.h)


def test_white_noise_statistics():
    g = SpaceTimeGrid(31, 1e-3, 0.1)
    dt = 1e-3
    n = 4000
    gen_fields = np.stack([
        sample_white_noise_increment(g, dt, RngStream(SEED, 10 + k)).values
        for k in range(n)])
    var = gen_fields.var(ddof=1)
    assert var == pytest.approx(1.0 / (g.h * dt), rel=0.05)
    # distinct cells uncorrelated
    c = np.mean(gen_fields[:, 3] * gen_fields[:, 17])
    se = 1.0 / (g.h * dt) / math.sqrt(n)
    assert abs(c) < 3 * se
    # sheet mass over one step: sum of cell values * h * dt has variance
    # (N h) dt -- the N cells tile a length N h < 1 (Dirichlet halves excluded)
    total = gen_fields.sum(axis=1) * g.h * dt
    want = g.n_sites * g.h * dt
    assert total.var(ddof=1) == pytest.approx(want, rel=0.12)
    with pytest.raises(ValueError):
        sample_white_noise_increment(g, -1.0, RngStream(SEED, 0))


def test_string_transition_stationarity():
    g = SpaceTimeGrid(63, 1e-3, 0.1)
    n = 8000
    zero = VectorField3(g, np.zeros((g.n_sites, 3)))
    vals = np.array([
        string_transition(zero, 10.0, RngStream(SEED, 20 + k)).values[g.site_of(0.5)]
        for k in range(n)])
    v = vals.var(ddof=1, axis=0).mean()
    # band-limited stationary variance at K = 63 modes
    k = np.arange(1, 64)
    band = float(np.sum(2 * np.sin(k * np.pi * 0.5) ** 2 / (k * np.pi) ** 2))
    se = band * math.sqrt(2.0 / n)
    assert abs(v - band) < 3 * se
    assert band == pytest.approx(0.25, abs=0.01)


def test_string_transition_short_time_continuity():
    g = SpaceTimeGrid(63, 1e-3, 0.1)
    x = sample_brownian_bridge_3d(g, RngStream(SEED, 30))
    out = string_transition(x, 1e-6, RngStream(SEED, 31))
    assert np.max(np.abs(out.values - x.values)) < 0.05
    with pytest.raises(ValueError):
        string_transition(x, 0.0, RngStream(SEED, 32))


def test_string_transition_semigroup_consistency():
    # two steps of t/2 equal one step of t in law: compare mode variances
    # analytically via the update coefficients, then statistically on values
    g = SpaceTimeGrid(31, 1e-3, 0.1)
    x = sample_brownian_bridge_3d(g, RngStream(SEED, 33))
    n = 4000
    one, two = [], []
    for k in range(n):
        a = string_transition(x, 0.4, RngStream(SEED, 100 + k))
        one.append(a.values[g.site_of(0.5), 0])
        b = string_transition(x, 0.2, RngStream(SEED, 100_000 + 2 * k))
        c = string_transition(b, 0.2, RngStream(SEED, 100_000 + 2 * k + 1))
        two.append(c.values[g.site_of(0.5), 0])
    ks = ks_2samp(one, two)
    assert ks.pvalue > 0.01


def test_string_invariance_from_mu3():
    g = SpaceTimeGrid(63, 1e-3, 0.1)
    n = 6000
    start, moved = [], []
    for k in range(n):
        x = sample_brownian_bridge_3d(g, RngStream(SEED, 200 + 2 * k))
        start.append(np.linalg.norm(x.values[g.site_of(0.5)]))
        y = string_transition(x, 0.5, RngStream(SEED, 200 + 2 * k + 1))
        moved.append(np.linalg.norm(y.values[g.site_of(0.5)]))
    ks = ks_2samp(start, moved)
    assert ks.pvalue > 0.01


def test_convolution_path_basics():
    g = SpaceTimeGrid(63, 1e-3, 1.0)
    times, fields = stochastic_convolution_path(g, 1e-3, 1000,
                                                RngStream(SEED, 40),
                                                snapshot_stride=100)
    assert fields[0].max() == 0.0
    assert times[-1] == pytest.approx(1.0)
    # zero boundary is structural (interior values only); mean ~ 0
    assert abs(fields[-1].mean()) < 0.5
    with pytest.raises(ValueError):
        stochastic_convolution_path(g, -1e-3, 10, RngStream(SEED, 41))


def test_convolution_stationary_variance():
    g = SpaceTimeGrid(31, 1e-3, 1.0)
    n = 1500
    vals = []
    for k in range(n):
        _, fields = stochastic_convolution_path(g, 0.05, 60, RngStream(SEED, 300 + k),
                                                snapshot_stride=60)
        vals.append(fields[-1][g.site_of(0.5)])
    v = np.var(vals, ddof=1)
    k = np.arange(1, 32)
    band = float(np.sum(2 * np.sin(k * np.pi * 0.5) ** 2 / (k * np.pi) ** 2))
    assert abs(v - band) < 3 * band * math.sqrt(2.0 / n)
    assert abs(np.mean(vals)) < 3 * math.sqrt(band / n)


def test_spectral_bridge_modes_variances():
    modes = spectral_bridge_modes(200, 4000, RngStream(SEED, 50))
    v1 = modes[:, 0, :].var(ddof=1)
    assert v1 == pytest.approx(1.0 / math.pi**2, rel=0.05)
    v5 = modes[:, 4, :].var(ddof=1)
    assert v5 == pytest.approx(1.0 / (25 * math.pi**2), rel=0.05)
