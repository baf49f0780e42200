"""Annealed co-generation of coupled pairwise diffusion models.

Independently specified pairwise models are coupled at inference time through
their shared variable: branches evolve in parallel, agree on the shared
subject via a consensus operator, and alternate heating (re-noising) with
cooling (denoising) so each pair relaxes back onto its own high-likelihood
manifold. Score models are closed-form Gaussians and mixtures, so every claim
can be checked against analytic oracles.
"""

from .consensus import Mean, Unified, Weighted, aggregate, weighted_balanced
from .diffusion import (
    NoiseSchedule,
    forward_noise,
    linear_schedule,
    posterior_step,
    renoise,
    tweedie_x0,
)
from .driver import (
    Branch,
    Clamp,
    EnsembleConfig,
    IndexPartition,
    RunResult,
    run_acg,
    run_batch,
    run_posthoc,
    synchronized_step,
    within_pair_loglik,
)
from .numerics import MultivariateGaussian, branch_stream, rng_stream
from .oracle import (
    TreeGaussian,
    compose_tree_joint,
    empirical_moments,
    factorization_check,
    score_fd_check,
    wasserstein2_gaussian,
)
from .schedules import (
    HeatSchedule,
    SchedulePreset,
    VisitTracker,
    heat_params,
    plan_trajectory,
    preset,
    sync_indicator,
)
from .scoremodels import (
    GaussianScoreModel,
    MixtureScoreModel,
    ScoreModel,
    model_from_json,
    noised_marginal,
    pair_model,
)

__version__ = "0.1.0"
