"""kis: sparse Bayesian regression with pairwise interactions.

MCMC over O(p) kernel hyperparameters instead of O(p^2) coefficients,
with exact per-coefficient posteriors recovered from the kernel
posterior at sparse probe points.
"""

from .features import EffectId, effect_ids, phi2_design, phi2_dim, phi2_map, phi_r_map
from .kernels import (
    InfeasibleTargetError,
    InteractionKernel,
    KernelConstraintError,
    PriorDiag,
    RWaySpec,
    TwoWayKernelSpec,
    block_kernel,
    block_kernel_eval,
    cross_kernel_at_probes,
    induced_prior_diag,
    kernel_matrix,
    poly_induced_prior,
    poly_kernel,
    r_way_eval,
    skim_kernel,
    skim_kernel_eval,
    solve_spec_from_diag,
    two_way_eval,
)
from .likelihood import (
    Dataset,
    FactorizationError,
    MarginalResult,
    benchmark_marginal,
    fit_loglog_slope,
    gp_log_marginal,
    naive_log_marginal,
    woodbury_log_marginal,
)
from .sampler import (
    EffectSummary,
    SamplerConfig,
    Trace,
    posterior_summaries,
    rhat_table,
    run_chains,
    split_rhat,
    split_rhat_sequences,
    target_log_density,
)
from .select import SelectionReport, hierarchical_screen, select_effects
from .skim import (
    HyperState,
    SkimConfig,
    constrain,
    log_prior_unconstrained,
    sample_prior,
    to_kernel,
    unconstrain,
)
from .trick import (
    CombinationMatrix,
    GaussianSummary,
    GPFit,
    ProbeSet,
    effect_posterior,
    joint_posterior,
    probe_gram,
)

__version__ = "0.1.0"
