"""Finite-state semi-Markov kernels: simulation, randomized block tests and
posterior concentration diagnostics."""

from .bayes import (
    ConcentrationCurve,
    DirichletSmkPosterior,
    DirichletSmkPrior,
    concentration_curve,
    feasibility_report,
    posterior_sample,
    posterior_update,
    prior_mass_kl,
    sieve_mass,
)
from .core import backend_name
from .hypotest import (
    ErrorStudy,
    TestOutcome,
    TestPlan,
    error_study,
    markov_vs_semimarkov,
    plan_ball,
    plan_simple,
    psi,
    psi_aggregate,
    psi_ball,
    psi_simple,
)
from .kernel import (
    AssumptionReport,
    ContinuousSmk,
    DiscreteSmk,
    NumericError,
    Sojourn,
    StateSpace,
    ValidationError,
    default_states,
    embed_markov_continuous,
    embed_markov_discrete,
    geometric_smk,
    mean_sojourn,
    minorization,
    random_smk,
    read_kernel,
    stationary_emc,
    stationary_pair,
    validate_assumptions,
    write_kernel,
)
from .metrics import (
    CoveringNet,
    LeastFavorablePair,
    covering_net,
    g_set,
    hellinger_affinity,
    hellinger_sq,
    least_favorable,
    phi_inverse_bound_check,
    semi_distance,
    verify_identities,
)
from .simulate import (
    Trajectory,
    batch_trajectories,
    in_kl_neighborhood,
    kl_functionals,
    log_likelihood,
    read_trajectory_csv,
    sample_trajectory,
    write_trajectory_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport", "ConcentrationCurve", "ContinuousSmk", "CoveringNet",
    "DirichletSmkPosterior", "DirichletSmkPrior", "DiscreteSmk", "ErrorStudy",
    "LeastFavorablePair", "NumericError", "Sojourn", "StateSpace", "TestOutcome",
    "TestPlan", "Trajectory", "ValidationError", "backend_name",
    "batch_trajectories", "concentration_curve", "covering_net", "default_states",
    "embed_markov_continuous", "embed_markov_discrete", "error_study",
    "feasibility_report", "g_set", "geometric_smk", "hellinger_affinity",
    "hellinger_sq", "in_kl_neighborhood", "kl_functionals", "least_favorable",
    "log_likelihood", "markov_vs_semimarkov", "mean_sojourn", "minorization",
    "phi_inverse_bound_check", "plan_ball", "plan_simple", "posterior_sample",
    "posterior_update", "prior_mass_kl", "psi", "psi_aggregate", "psi_ball",
    "psi_simple", "random_smk", "read_kernel", "read_trajectory_csv",
    "sample_trajectory", "semi_distance", "sieve_mass", "stationary_emc",
    "stationary_pair", "validate_assumptions", "verify_identities",
    "write_kernel", "write_trajectory_csv",
]
