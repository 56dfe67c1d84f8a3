"""Beta priors from defaults, expert try-on feedback and image-based cues.

Informative priors are capped by ``(alpha_max, beta_max)`` so that the prior
alone cannot push the posterior score past the flag threshold before any
order is observed.  The caps come from :func:`solve_prior_bounds`:

* ``alpha_max``: the integer ``alpha`` whose worst-case prior score
  ``max_{pi in Pi} p0(pi, alpha, 1)`` lands closest to ``theta``;
* ``beta_max``: the integer ``beta`` whose best-case prior score
  ``min_{pi in Pi} p0(pi, 1, beta)`` lands closest to ``-1``.

"Closest" means the first local minimizer met when scanning upward from 1.

The feedback and cue mappings below are conventions, tunable through the
function arguments.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

from .core import CategoryStats, PriorParams, Provenance, beta_log_density
from .errors import BoundaryError, SolverRangeError
from .records import Direction

DEFAULT_CONCENTRATION = 2.0
MAX_SHAPE = 1000


class Verdict(str, enum.Enum):
    CERTAIN_SIZE_ISSUE = "certain_size_issue"
    POTENTIAL_SIZE_ISSUE = "potential_size_issue"
    GOOD_FIT = "good_fit"

    @classmethod
    def parse(cls, text: str) -> "Verdict":
        key = text.strip().lower().replace("-", " ").replace("_", " ")
        key = "_".join(key.split())
        return cls(key)


# most issue-leaning first; used to break plurality ties
_ISSUE_ORDER = (Verdict.CERTAIN_SIZE_ISSUE, Verdict.POTENTIAL_SIZE_ISSUE, Verdict.GOOD_FIT)


@dataclass(frozen=True)
class ExpertFeedback:
    article_id: str
    verdicts: Tuple[Verdict, ...]
    direction: Direction = Direction.TOO_BIG

    def __post_init__(self):
        if not self.verdicts:
            raise ValueError(f"feedback for {self.article_id} has no verdicts")
        object.__setattr__(self, "verdicts", tuple(Verdict(v) for v in self.verdicts))
        object.__setattr__(self, "direction", Direction(self.direction))

    def aggregate(self) -> Verdict:
        """Plurality verdict; ties go to the more issue-leaning class."""
        tally = Counter(self.verdicts)
        return max(_ISSUE_ORDER, key=lambda v: (tally[v], -_ISSUE_ORDER.index(v)))


@dataclass(frozen=True)
class VisualCue:
    article_id: str
    size_issue_probability: float
    direction: Direction = Direction.TOO_BIG

    def __post_init__(self):
        if not 0.0 <= self.size_issue_probability <= 1.0:
            raise ValueError(
                f"size issue probability must lie in [0, 1], got {self.size_issue_probability}"
            )
        object.__setattr__(self, "direction", Direction(self.direction))


@dataclass(frozen=True)
class PriorBounds:
    alpha_max: int
    beta_max: int
    theta: float
    pi_interval: Tuple[float, float]
    pi_star_alpha: float
    pi_star_beta: float
    delta_alpha: float
    delta_beta: float

    def to_dict(self) -> dict:
        return {
            "alpha_max": self.alpha_max,
            "beta_max": self.beta_max,
            "theta": self.theta,
            "pi_interval": list(self.pi_interval),
            "pi_star_alpha": self.pi_star_alpha,
            "pi_star_beta": self.pi_star_beta,
            "delta_alpha": self.delta_alpha,
            "delta_beta": self.delta_beta,
        }


def prior_score_p0(pi: float, alpha: float, beta: float) -> float:
    """Score of the prior alone: ``-ln p(pi | 0, 0; alpha, beta)``."""
    return -beta_log_density(pi, (alpha, beta))


def _first_local_argmin(objective, limit: int, label: str, cap: Optional[int] = None) -> int:
    """Scan ``1, 2, ...`` and return the first point after which the objective rises.

    Plateaus are walked across.  The scan also ends at ``cap``; reaching
    ``limit`` instead is an error.
    """
    best, best_value = 1, objective(1)
    stop = limit if cap is None else min(cap, limit)
    for x in range(2, stop + 1):
        value = objective(x)
        if value > best_value:
            return best
        if value < best_value:
            best, best_value = x, value
    if cap is not None and cap <= limit:
        return best
    raise SolverRangeError(f"{label} search reached its upper limit {limit}")


def solve_prior_bounds(
    pi_interval: Tuple[float, float], theta: float, max_shape: int = MAX_SHAPE
) -> PriorBounds:
    """Integer caps ``(alpha_max, beta_max)`` for informative priors.

    With ``beta = 1`` the prior score ``-ln(alpha) - (alpha-1) ln(pi)`` falls
    as ``pi`` grows, and with ``alpha = 1`` the score
    ``-ln(beta) - (beta-1) ln(1-pi)`` rises with ``pi``; both inner extrema
    therefore sit at the lower end of the interval.

    The outer search walks the integers upward from 1 and returns the first
    local minimizer.  The beta objective is not unimodal: ``p0(pi, 1, beta)``
    dips below -1 and climbs back, so a second, larger crossing of -1 exists;
    the smallest shape reaching the target is the bound we want.  ``beta_max``
    is also capped at the turning point ``-1 / ln(1 - pi)`` of that curve so
    that no smaller ``beta`` gives a lower prior score than ``beta_max``.
    """
    lo, hi = float(pi_interval[0]), float(pi_interval[1])
    if not (0.0 < lo <= hi < 1.0):
        raise BoundaryError(f"plausibility interval must lie inside (0, 1), got {pi_interval}")
    if theta <= 0.0:
        raise ValueError(f"theta must be positive, got {theta}")

    pi_star_alpha = lo
    pi_star_beta = lo
    alpha_max = _first_local_argmin(
        lambda a: abs(prior_score_p0(pi_star_alpha, a, 1.0) - theta), max_shape, "alpha_max"
    )
    turning = -1.0 / math.log1p(-pi_star_beta)
    beta_max = _first_local_argmin(
        lambda b: abs(prior_score_p0(pi_star_beta, 1.0, b) + 1.0),
        max_shape,
        "beta_max",
        cap=max(1, int(math.floor(turning))),
    )
    return PriorBounds(
        alpha_max=alpha_max,
        beta_max=beta_max,
        theta=float(theta),
        pi_interval=(lo, hi),
        pi_star_alpha=pi_star_alpha,
        pi_star_beta=pi_star_beta,
        delta_alpha=prior_score_p0(pi_star_alpha, alpha_max, 1.0),
        delta_beta=prior_score_p0(pi_star_beta, 1.0, beta_max),
    )


def default_prior(
    stats: CategoryStats,
    concentration: float = DEFAULT_CONCENTRATION,
    bounds: Optional[PriorBounds] = None,
) -> PriorParams:
    """Weak prior with its mode at the category mean.

    ``(1 + c*pi, 1 + c*(1 - pi))``; ``concentration=0`` gives the uniform
    prior.  When ``bounds`` are given the shapes are clipped to them.
    """
    alpha = 1.0 + concentration * stats.pi
    beta = 1.0 + concentration * (1.0 - stats.pi)
    if bounds is not None:
        alpha = min(alpha, float(bounds.alpha_max))
        beta = min(beta, float(bounds.beta_max))
    return PriorParams(alpha, beta, Provenance.DEFAULT)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def prior_from_feedback(
    feedback: ExpertFeedback,
    bounds: PriorBounds,
    stats: Optional[CategoryStats] = None,
) -> PriorParams:
    verdict = feedback.aggregate()
    if verdict is Verdict.CERTAIN_SIZE_ISSUE:
        alpha, beta = bounds.alpha_max, 1
    elif verdict is Verdict.POTENTIAL_SIZE_ISSUE:
        alpha, beta = math.ceil((bounds.alpha_max + 1) / 2), 1
    else:
        alpha, beta = 1, bounds.beta_max
    return PriorParams(float(alpha), float(beta), Provenance.HUMAN_FEEDBACK)


def prior_from_visual_cue(
    cue: VisualCue,
    bounds: PriorBounds,
    stats: Optional[CategoryStats] = None,
) -> PriorParams:
    """Map a size issue probability onto the prior bounds.

    Probabilities above one half scale ``alpha`` toward ``alpha_max``, those
    below scale ``beta`` toward ``beta_max``; exactly one half is uniform.
    """
    p = cue.size_issue_probability
    if p >= 0.5:
        alpha = 1 + _round_half_up((2.0 * p - 1.0) * (bounds.alpha_max - 1))
        beta = 1
    else:
        alpha = 1
        beta = 1 + _round_half_up((1.0 - 2.0 * p) * (bounds.beta_max - 1))
    return PriorParams(float(alpha), float(beta), Provenance.VISUAL_CUE)


def select_prior(
    article_id: str,
    feedback: Optional[ExpertFeedback],
    cue: Optional[VisualCue],
    bounds: PriorBounds,
    stats: CategoryStats,
    concentration: float = DEFAULT_CONCENTRATION,
) -> PriorParams:
    """Human feedback wins over a visual cue, which wins over the default."""
    if feedback is not None:
        return prior_from_feedback(feedback, bounds, stats)
    if cue is not None:
        return prior_from_visual_cue(cue, bounds, stats)
    return default_prior(stats, concentration, bounds)


def verdicts_from_strings(values: Iterable[str]) -> Tuple[Verdict, ...]:
    return tuple(Verdict.parse(v) for v in values)
