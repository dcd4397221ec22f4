"""Non-parametric Bayesian estimation of a time-dependent dispersion
coefficient from high-frequency observations, with samplers and
posterior-consistency diagnostics."""

__version__ = "0.1.0"

from .model import (
    ClassParams,
    DispersionFn,
    ObservationPath,
    DispersionClassError,
    integrate_sigma_sq,
    cell_variances,
    simulate_path,
    l2_distance,
    sup_distance,
    quadratic_variation,
)
from .likelihood import (
    LikelihoodBreakdown,
    log_likelihood,
    breakdown,
    q_n,
    integral_bound_lhs,
    qn_oscillation_bound,
)
from .prior import (
    LogisticLink,
    PriorSpec,
    GaussianDriver,
    sample_driver,
    driver_to_sigma,
    sample_prior,
    rkhs_norm,
    small_ball_mass,
)
from .posterior import (
    ChainState,
    ChainResult,
    PosteriorEstimate,
    pcn_step,
    run_chain,
    posterior_mass_is,
    ball_mass,
)
from .consistency import (
    SweepConfig,
    ConsistencyReport,
    estimate_dn,
    estimate_nn,
    run_sweep,
    verify_lemmas,
)

__all__ = [
    "__version__",
    "ClassParams",
    "DispersionFn",
    "ObservationPath",
    "DispersionClassError",
    "integrate_sigma_sq",
    "cell_variances",
    "simulate_path",
    "l2_distance",
    "sup_distance",
    "quadratic_variation",
    "LikelihoodBreakdown",
    "log_likelihood",
    "breakdown",
    "q_n",
    "integral_bound_lhs",
    "qn_oscillation_bound",
    "LogisticLink",
    "PriorSpec",
    "GaussianDriver",
    "sample_driver",
    "driver_to_sigma",
    "sample_prior",
    "rkhs_norm",
    "small_ball_mass",
    "ChainState",
    "ChainResult",
    "PosteriorEstimate",
    "pcn_step",
    "run_chain",
    "posterior_mass_is",
    "ball_mass",
    "SweepConfig",
    "ConsistencyReport",
    "estimate_dn",
    "estimate_nn",
    "run_sweep",
    "verify_lemmas",
]
