"""spdelab: a Monte Carlo laboratory for the reflected stochastic heat
equation on the unit interval.

Modules
-------
kernels     Dirichlet heat kernel, half-line kernel, covariance family q
sampling    reproducible Gaussian samplers (bridges, white noise, string)
reflected   LCP/penalized time stepping, Skorohod baseline, validators
localtime   occupation / local-time / boundary estimators over trajectories
potentials  resolvent potentials, invariant-marginal densities, targets
harness     experiment orchestration and the verification suite
"""

from ._accel import HAS_NUMBA, USE_NUMBA, backend_name
from .grids import ScalarField, SpaceTimeGrid, VectorField3
from .kernels import (KernelParams, check_estq, heat_kernel_g, kernel_G,
                      q_complement, q_inf_series, q_infinity, q_kernel,
                      semigroup_apply)
from .localtime import (OccupationEstimate, RenormalizedEstimate,
                        ResolutionWarning, boundary_functional,
                        check_decomposition, eta_density_check,
                        occupation_band, occupation_formula_residual,
                        renormalized_local_time, small_level_rescale,
                        zero_set_stats)
from .potentials import (PotentialQuery, TimeQuadrature, boundary_surrogate,
                         build_time_quadrature, gamma3, gamma3_batch,
                         marginal_cdf, marginal_density, mean_norm_noncentral,
                         revuz_targets, u3_directional_derivative,
                         u3_potential)
from .reflected import (ClosedFormulaReport, LcpSolverError, ReflectionLedger,
                        Trajectory, check_closed_formula, check_weak_form,
                        sine_test_function, skorohod_1d, skorohod_ensemble,
                        solve_reflected)
from .sampling import (RngStream, bessel3_bridge_batch,
                       sample_bessel3_bridge, sample_brownian_bridge_3d,
                       sample_white_noise_increment, spectral_bridge_modes,
                       stochastic_convolution_path, string_transition)
from .harness import (CRITERIA, EstimatorResult, ExperimentConfig,
                      run_experiment, verify_all)

__version__ = "0.1.0"
