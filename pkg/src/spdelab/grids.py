"""Space-time grid and field containers.

The spatial domain is the unit interval with homogeneous Dirichlet data.
A grid with ``n_sites`` interior sites has spacing ``h = 1/(n_sites+1)``;
site ``i`` (1-based in formulas, 0-based in arrays) lives at ``theta = i*h``.
Fields store interior values only; the boundary values are identically zero.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform discretization of [0,T] x (0,1).

    Attributes
    ----------
    n_sites : int
        Number of interior sites N; the spacing is h = 1/(N+1).
    dt : float
        Time step.
    T : float
        Time horizon (T >= dt).
    """

    n_sites: int
    dt: float
    T: float

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError(f"n_sites must be >= 1, got {self.n_sites}")
        if not (self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.T < self.dt:
            raise ValueError(f"T must be >= dt, got T={self.T}, dt={self.dt}")

    @property
    def h(self):
        return 1.0 / (self.n_sites + 1)

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def thetas(self):
        return self.h * np.arange(1, self.n_sites + 1)

    def site_of(self, theta, tol=1e-9):
        """Index of the grid site at ``theta``; raises if off-grid."""
        pos = theta / self.h
        i = int(round(pos)) - 1
        if i < 0 or i >= self.n_sites or abs(pos - round(pos)) > tol:
            raise ValueError(f"theta={theta} is not a grid site (h={self.h})")
        return i


def _check_values(grid, values, ncomp):
    values = np.asarray(values, dtype=np.float64)
    want = (grid.n_sites,) if ncomp == 1 else (grid.n_sites, ncomp)
    if values.shape != want:
        raise ValueError(f"field shape {values.shape} != {want}")
    return values


@dataclass
class ScalarField:
    """Real field on the interior sites, zero on the boundary.

    When ``nonnegative=True`` (fields representing the reflected solution or
    Bessel-bridge configurations) construction rejects values below -1e-12
    and clamps tiny negatives to zero.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    nonnegative: bool = False

    def __post_init__(self):
        self.values = _check_values(self.grid, self.values, 1)
        if self.nonnegative:
            lo = self.values.min() if self.values.size else 0.0
            if lo < -1e-12:
                raise ValueError(f"nonnegative field has value {lo}")
            np.clip(self.values, 0.0, None, out=self.values)

    def copy(self):
        return ScalarField(self.grid, self.values.copy(), self.nonnegative)


@dataclass
class VectorField3:
    """R^3-valued field on the interior sites, zero vector on the boundary."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = _check_values(self.grid, self.values, 3)

    def modulus(self):
        return ScalarField(self.grid, np.linalg.norm(self.values, axis=1),
                           nonnegative=True)

    def copy(self):
        return VectorField3(self.grid, self.values.copy())


def sine_matrix(n_sites, n_modes=None):
    """Orthonormal discrete sine basis sampled on the grid.

    Returns ``S`` of shape (n_modes, n_sites) with ``S[k-1, i-1] =
    sqrt(2) sin(k pi theta_i)``.  With ``n_modes == n_sites`` the rows are
    exactly orthonormal for the h-weighted inner product, so
    ``coeffs = h * S @ values`` and ``values = S.T @ coeffs`` are inverse
    transforms.
    """
    if n_modes is None:
        n_modes = n_sites
    h = 1.0 / (n_sites + 1)
    k = np.arange(1, n_modes + 1)[:, None]
    i = np.arange(1, n_sites + 1)[None, :]
    return np.sqrt(2.0) * np.sin(k * np.pi * i * h)


def to_modes(values, sine_mat, h):
    return h * (sine_mat @ values)


def from_modes(coeffs, sine_mat):
    return sine_mat.T @ coeffs


def dirichlet_laplacian(values, h):
    """Second difference with zero boundary, divided by h^2.

    Works on (..., N) shaped arrays along the last axis.
    """
    v = np.asarray(values)
    out = -2.0 * v
    out[..., :-1] += v[..., 1:]
    out[..., 1:] += v[..., :-1]
    return out / (h * h)
