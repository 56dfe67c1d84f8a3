"""Joint flag conditions and the per-category flagging pass.

An article is flagged in one direction when its observed return rate reaches
``pi + sigma`` *and* its score reaches ``theta``.  The score is either the
binomial negative log-likelihood at ``pi`` (variant V0) or the negative log
posterior density at ``pi`` (all Bayesian variants).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional

from .core import (
    CategoryStats,
    PriorParams,
    ReturnCounts,
    binomial_score,
    posterior_score,
)
from .errors import ConfigError
from .priors import default_prior
from .records import DIRECTIONS, ArticleRecord, Direction

SINGLE_PRECISION_EPS = 2.0 ** -23
THETA_MACHINE_EPSILON = -math.log(SINGLE_PRECISION_EPS)


class Variant(str, enum.Enum):
    V0 = "V0"
    V_HF = "V_HF"
    V_BASE = "V_Base"
    V_SN = "V_SN"
    V_TH = "V_TH"
    SIZEFLAGS = "SizeFlags"

    @property
    def bayesian(self) -> bool:
        return self is not Variant.V0

    @property
    def uses_cues(self) -> bool:
        return self in (Variant.V_SN, Variant.SIZEFLAGS)

    @property
    def optimized_threshold(self) -> bool:
        return self in (Variant.V_TH, Variant.SIZEFLAGS)


class Reason(str, enum.Enum):
    FLAGGED = "flagged"
    NO_DATA = "no_data"
    BELOW_MIN_ORDERS = "below_min_orders"
    RATE_CONDITION = "rate_condition"
    SCORE_CONDITION = "score_condition"
    DEGENERATE_PI = "degenerate_pi"


@dataclass(frozen=True)
class FlagConfig:
    theta: float = THETA_MACHINE_EPSILON
    variant: Variant = Variant.V_BASE
    min_orders: int = 1
    theta_by_direction: Optional[Mapping[Direction, float]] = None

    def __post_init__(self):
        if not self.theta > 0.0:
            raise ConfigError(f"theta must be positive, got {self.theta}")
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.theta_by_direction is not None:
            thetas = {Direction(d): float(t) for d, t in self.theta_by_direction.items()}
            if any(not t > 0.0 for t in thetas.values()):
                raise ConfigError("per-direction thresholds must be positive")
            object.__setattr__(self, "theta_by_direction", thetas)

    @classmethod
    def from_epsilon(cls, epsilon: float, **kwargs) -> "FlagConfig":
        if not 0.0 < epsilon < 1.0:
            raise ConfigError(f"epsilon bound must lie in (0, 1), got {epsilon}")
        return cls(theta=-math.log(epsilon), **kwargs)

    @property
    def epsilon_bound(self) -> float:
        return math.exp(-self.theta)

    def theta_for(self, direction: Direction) -> float:
        if self.theta_by_direction and Direction(direction) in self.theta_by_direction:
            return self.theta_by_direction[Direction(direction)]
        return self.theta


@dataclass(frozen=True)
class FlagDecision:
    article_id: str
    direction: Direction
    flagged: bool
    score: Optional[float]
    srr_observed: Optional[float]
    threshold_used: float
    prior_used: Optional[PriorParams]
    model_variant: Variant
    reason: Reason
    orders: int = 0
    returns: int = 0

    def to_dict(self) -> dict:
        return {
            "article_id": self.article_id,
            "direction": self.direction.value,
            "flagged": self.flagged,
            "score": self.score,
            "srr_observed": self.srr_observed,
            "threshold_used": self.threshold_used,
            "prior_used": self.prior_used.to_dict() if self.prior_used else None,
            "model_variant": self.model_variant.value,
            "reason": self.reason.value,
            "orders": self.orders,
            "returns": self.returns,
        }


def _decide(
    counts: ReturnCounts,
    stats: CategoryStats,
    config: FlagConfig,
    direction: Direction,
    article_id: str,
    prior: Optional[PriorParams],
) -> FlagDecision:
    theta = config.theta_for(direction)
    base = dict(
        article_id=article_id,
        direction=Direction(direction),
        threshold_used=theta,
        prior_used=prior,
        model_variant=config.variant,
        orders=counts.orders,
        returns=counts.returns,
    )
    if counts.orders == 0:
        return FlagDecision(flagged=False, score=None, srr_observed=None, reason=Reason.NO_DATA, **base)
    rate = counts.returns / counts.orders
    if counts.orders < config.min_orders:
        return FlagDecision(
            flagged=False, score=None, srr_observed=rate, reason=Reason.BELOW_MIN_ORDERS, **base
        )
    if rate < stats.pi + stats.sigma:
        return FlagDecision(
            flagged=False, score=None, srr_observed=rate, reason=Reason.RATE_CONDITION, **base
        )
    if not 0.0 < stats.pi < 1.0:
        return FlagDecision(
            flagged=False, score=None, srr_observed=rate, reason=Reason.DEGENERATE_PI, **base
        )
    if prior is None:
        score = binomial_score(counts, stats.pi)
    else:
        score = posterior_score(stats.pi, counts, prior)
    flagged = score >= theta
    return FlagDecision(
        flagged=flagged,
        score=score,
        srr_observed=rate,
        reason=Reason.FLAGGED if flagged else Reason.SCORE_CONDITION,
        **base,
    )


def flag_binomial(
    counts: ReturnCounts,
    stats: CategoryStats,
    config: FlagConfig,
    direction: Direction = Direction.TOO_BIG,
    article_id: str = "",
) -> FlagDecision:
    """Binomial-likelihood flag: ``k/n >= pi + sigma`` and ``s >= theta``.

    The rate condition is checked first; the score is only computed for
    articles that pass it, so ``score`` is ``None`` otherwise.
    """
    return _decide(counts, stats, config, direction, article_id, None)


def flag_bayesian(
    counts: ReturnCounts,
    stats: CategoryStats,
    prior: PriorParams,
    config: FlagConfig,
    direction: Direction = Direction.TOO_BIG,
    article_id: str = "",
) -> FlagDecision:
    """Posterior flag: ``k/n >= pi + sigma`` and ``-ln p(pi | k, n; alpha, beta) >= theta``."""
    return _decide(counts, stats, config, direction, article_id, prior)


PriorTable = Mapping[Direction, Mapping[str, PriorParams]]


def run_sizeflags(
    category: Iterable[ArticleRecord],
    stats: Mapping[Direction, CategoryStats],
    priors: Optional[PriorTable],
    config: FlagConfig,
    default_concentration: float = 2.0,
) -> List[FlagDecision]:
    """Flag every article of a category in both directions.

    Returns two decisions per article, ordered by ``(article_id, direction)``.
    Articles without an entry in ``priors`` get the default prior of their
    category.  Variant V0 ignores priors.
    """
    decisions: List[FlagDecision] = []
    defaults: Dict[Direction, PriorParams] = {}
    for record in sorted(category, key=lambda r: r.article_id):
        for direction in DIRECTIONS:
            dstats = stats[direction]
            counts = record.counts(direction)
            if not config.variant.bayesian:
                decisions.append(flag_binomial(counts, dstats, config, direction, record.article_id))
                continue
            prior = None
            if priors is not None:
                prior = priors.get(direction, {}).get(record.article_id)
            if prior is None:
                if direction not in defaults:
                    defaults[direction] = default_prior(dstats, default_concentration)
                prior = defaults[direction]
            decisions.append(
                flag_bayesian(counts, dstats, prior, config, direction, record.article_id)
            )
    return decisions


def flagged_articles(decisions: Iterable[FlagDecision]) -> Dict[str, List[Direction]]:
    """Articles with at least one raised flag; absent articles have no size issue."""
    out: Dict[str, List[Direction]] = {}
    for d in decisions:
        if d.flagged:
            out.setdefault(d.article_id, []).append(d.direction)
    return out
