"""Numerical kernels for the Beta-Binomial return-rate model.

All logarithms are natural.  Binomial coefficients and Beta functions are
always evaluated through log-gamma so that order counts in the millions do
not overflow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Optional, Tuple

import numpy as np

from .errors import (
    BoundaryError,
    DegenerateParameterError,
    InsufficientDataError,
    UndefinedRateError,
)

__all__ = [
    "ReturnCounts",
    "CategoryStats",
    "Provenance",
    "PriorParams",
    "PosteriorParams",
    "srr",
    "compute_category_stats",
    "log_binomial_coefficient",
    "binomial_score",
    "log_beta_function",
    "beta_log_density",
    "posterior",
    "posterior_score",
    "posterior_conventions",
]


@dataclass(frozen=True)
class ReturnCounts:
    """Cumulative orders ``n`` and size-related returns ``k`` for one direction."""

    orders: int
    returns: int

    def __post_init__(self):
        if self.orders < 0 or self.returns < 0:
            raise ValueError(f"counts must be non-negative, got n={self.orders}, k={self.returns}")
        if self.returns > self.orders:
            raise ValueError(f"returns ({self.returns}) exceed orders ({self.orders})")


@dataclass(frozen=True)
class CategoryStats:
    pi: float
    sigma: float
    pi_interval: Tuple[float, float]
    category_id: str = ""
    window: Optional[Tuple[datetime, datetime]] = None
    article_count: int = 0

    def __post_init__(self):
        lo, hi = self.pi_interval
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"pi must lie in [0, 1], got {self.pi}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"invalid pi_interval {self.pi_interval}")

    @property
    def rate_threshold(self) -> float:
        """``pi + sigma``, the observed-rate cut of the flag condition."""
        return self.pi + self.sigma


class Provenance(str, enum.Enum):
    DEFAULT = "default"
    HUMAN_FEEDBACK = "human_feedback"
    VISUAL_CUE = "visual_cue"


@dataclass(frozen=True)
class PriorParams:
    alpha: float
    beta: float
    provenance: Provenance = Provenance.DEFAULT

    def __post_init__(self):
        if not (self.alpha >= 1.0 and self.beta >= 1.0):
            raise ValueError(f"prior shapes must be >= 1, got ({self.alpha}, {self.beta})")
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @classmethod
    def uniform(cls) -> "PriorParams":
        return cls(1.0, 1.0, Provenance.DEFAULT)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "provenance": self.provenance.value}


@dataclass(frozen=True)
class PosteriorParams:
    alpha_post: float
    beta_post: float

    def __post_init__(self):
        if not (self.alpha_post > 0.0 and self.beta_post > 0.0):
            raise ValueError(
                f"posterior shapes must be positive, got ({self.alpha_post}, {self.beta_post})"
            )


def _shapes(params) -> Tuple[float, float]:
    if isinstance(params, PosteriorParams):
        return params.alpha_post, params.beta_post
    if isinstance(params, PriorParams):
        return params.alpha, params.beta
    a, b = params
    return float(a), float(b)


def srr(counts: ReturnCounts) -> float:
    """Observed size-related return rate ``k / n``."""
    if counts.orders == 0:
        raise UndefinedRateError("return rate is undefined for an article with zero orders")
    return counts.returns / counts.orders


def compute_category_stats(
    articles: Iterable[ReturnCounts],
    min_orders: int = 1,
    category_id: str = "",
    window: Optional[Tuple[datetime, datetime]] = None,
) -> CategoryStats:
    """Mean and population standard deviation of ``srr`` over a category.

    Articles with fewer than ``min_orders`` orders (at least 1) are skipped.
    The plausibility interval is ``[pi - sigma, pi + sigma]`` clamped to
    ``[0, 1]``.
    """
    floor = max(1, int(min_orders))
    rates = np.array([c.returns / c.orders for c in articles if c.orders >= floor], dtype=float)
    if rates.size < 2:
        raise InsufficientDataError(
            f"need at least 2 articles with >= {floor} orders, found {rates.size}"
        )
    pi = float(rates.mean())
    sigma = float(rates.std(ddof=0))
    interval = (max(0.0, pi - sigma), min(1.0, pi + sigma))
    return CategoryStats(
        pi=pi,
        sigma=sigma,
        pi_interval=interval,
        category_id=category_id,
        window=window,
        article_count=int(rates.size),
    )


def log_binomial_coefficient(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _check_open_rate(pi: float) -> None:
    if not 0.0 < pi < 1.0:
        raise DegenerateParameterError(f"rate parameter must lie strictly inside (0, 1), got {pi}")


def binomial_score(counts: ReturnCounts, pi: float) -> float:
    """Negative log binomial likelihood ``-ln[C(n,k) pi^k (1-pi)^(n-k)]``."""
    _check_open_rate(pi)
    n, k = counts.orders, counts.returns
    log_lik = log_binomial_coefficient(n, k) + k * math.log(pi) + (n - k) * math.log1p(-pi)
    return -log_lik


def log_beta_function(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def beta_log_density(r: float, params) -> float:
    """Log density of a Beta distribution at ``r``.

    ``params`` may be a :class:`PriorParams`, a :class:`PosteriorParams` or a
    plain ``(a, b)`` pair.
    """
    if not 0.0 < r < 1.0:
        raise BoundaryError(f"Beta density evaluated at boundary point r={r}")
    a, b = _shapes(params)
    if not (a > 0.0 and b > 0.0):
        raise ValueError(f"shape parameters must be positive, got ({a}, {b})")
    return -log_beta_function(a, b) + (a - 1.0) * math.log(r) + (b - 1.0) * math.log1p(-r)


def posterior(counts: ReturnCounts, prior: PriorParams) -> PosteriorParams:
    """Conjugate update: ``(k + alpha, n - k + beta)``."""
    return PosteriorParams(
        alpha_post=counts.returns + prior.alpha,
        beta_post=counts.orders - counts.returns + prior.beta,
    )


def posterior_score(pi: float, counts: ReturnCounts, prior: PriorParams) -> float:
    """``-ln p(pi | k, n; alpha, beta)``: the posterior density evaluated at the category mean."""
    return -beta_log_density(pi, posterior(counts, prior))


def posterior_conventions(counts: ReturnCounts, prior: PriorParams) -> dict:
    """Both parameterizations of the posterior, for diagnostics output.

    ``shape`` is what the density uses (``k + alpha, n - k + beta``);
    ``exponent`` lists the exponents of ``r`` and ``1 - r`` in the density,
    which are the shape parameters minus one.
    """
    post = posterior(counts, prior)
    return {
        "shape": [post.alpha_post, post.beta_post],
        "exponent": [post.alpha_post - 1.0, post.beta_post - 1.0],
    }
