"""Size-and-fit issue flagging from order/return counts with Beta-Binomial priors."""

from .core import (
    CategoryStats,
    PosteriorParams,
    PriorParams,
    Provenance,
    ReturnCounts,
    beta_log_density,
    binomial_score,
    compute_category_stats,
    posterior,
    posterior_score,
    srr,
)
from .flagging import (
    THETA_MACHINE_EPSILON,
    FlagConfig,
    FlagDecision,
    Variant,
    flag_bayesian,
    flag_binomial,
    run_sizeflags,
)
from .priors import (
    ExpertFeedback,
    PriorBounds,
    Verdict,
    VisualCue,
    default_prior,
    prior_from_feedback,
    prior_from_visual_cue,
    prior_score_p0,
    select_prior,
    solve_prior_bounds,
)
from .records import ArticleRecord, Covariates, Direction, SnapshotSeries

__all__ = [
    "CategoryStats",
    "PosteriorParams",
    "PriorParams",
    "Provenance",
    "ReturnCounts",
    "beta_log_density",
    "binomial_score",
    "compute_category_stats",
    "posterior",
    "posterior_score",
    "srr",
    "THETA_MACHINE_EPSILON",
    "FlagConfig",
    "FlagDecision",
    "Variant",
    "flag_bayesian",
    "flag_binomial",
    "run_sizeflags",
    "ExpertFeedback",
    "PriorBounds",
    "Verdict",
    "VisualCue",
    "default_prior",
    "prior_from_feedback",
    "prior_from_visual_cue",
    "prior_score_p0",
    "select_prior",
    "solve_prior_bounds",
    "ArticleRecord",
    "Covariates",
    "Direction",
    "SnapshotSeries",
]

__version__ = "0.1.0"
