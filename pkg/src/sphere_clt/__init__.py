"""Numerical laboratory for normal approximation of weighted sums.

Weighted sums <X, theta> of an isotropic random vector X, with directions
theta on the unit sphere, are close to standard normal for most theta.
This package evaluates the spherical densities and characteristic
functions behind that phenomenon, estimates the governing moment
functionals, measures Kolmogorov distances four different ways, and runs
the rate, tail, and linear-part experiments end to end.
"""

from .charfn import (CFProfile, LinearPartEstimate, build_cf_profile,
                     cf_error_budget, corrected_cf, decay_bound_margin, jn,
                     jn_scaled, jn_scaled_deriv, kn_prime, linear_part_asymptotic,
                     linear_part_exact, mean_cf, weighted_sum_cf)
from .distance import (DiscreteDistribution, DistanceEstimate,
                       InversionNotApplicable, be_upper_bound, ks_empirical,
                       ks_exact_discrete, ks_inversion, product_cf,
                       rademacher_sum_distribution)
from .experiments import (ExperimentConfig, SweepResult, emit_outputs,
                          run_linear_part_report, run_rate_sweep,
                          run_tail_sweep, run_verification_suite)
from .functionals import (ConcentrationReport, InequalityRecord, MomentReport,
                          estimate_lambda_cap, moment_report,
                          nonsymmetric_quantities, psi1_norm,
                          verify_poincare_consequences)
from .models import (MODEL_NAMES, IsotropyAudit, ModelSpec, isotropy_audit,
                     make_model, sample_matrix, sample_vector)
from .sphere_core import (DensityProfile, RandomStream, UnitVector,
                          build_density_profile, coord_density,
                          density_error_budget, edgeworth_density,
                          hermite4, norm_const, sample_direction)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
