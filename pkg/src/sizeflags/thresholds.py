"""Per-category threshold calibration on historical snapshots.

The conservative threshold ``theta_max = -ln(eps_min)`` yields stable but
slow flags.  We look for the smallest ``theta`` on an equidistant grid over
``(0, theta_max]`` whose flags stay close to the ``theta_max`` flags:

    (N(t) - S(t)) / N(t)                       <= eps1   (unstable share)
    (N(t) - N(theta_max)) / N(theta_max)       <= eps2   (extra flags)
    (N(t) - S(t)) / (N(tm) - S(tm))            <= eps3   (unstable growth)

``N`` counts articles flagged at any snapshot of the window and ``S`` those
whose flag, once raised, stays raised at every later snapshot.  Scores do not
depend on ``theta``, so each article/snapshot cell is scored once and the
grid sweep only compares against thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import CategoryStats, PriorParams, ReturnCounts
from .errors import InsufficientBaselineError, ValidationError
from .flagging import THETA_MACHINE_EPSILON, FlagConfig, Variant, flag_bayesian
from .priors import default_prior
from .records import Direction, SnapshotSeries

DEFAULT_EPSILONS = (0.2, 0.05, 1.5)
DEFAULT_GRID = 256


@dataclass(frozen=True)
class ScoreTable:
    """Posterior scores per article (rows) and snapshot (columns).

    Cells where the rate condition fails, or the article has no orders yet,
    hold ``nan`` and never flag.
    """

    article_ids: Tuple[str, ...]
    scores: np.ndarray

    def flags(self, theta: float) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.scores >= theta


def score_table(
    series: SnapshotSeries,
    stats: CategoryStats,
    priors: Optional[Mapping[str, PriorParams]],
    direction: Direction = Direction.TOO_BIG,
    min_orders: int = 1,
    default_concentration: float = 2.0,
) -> ScoreTable:
    if len(series) == 0:
        raise ValidationError("snapshot series is empty")
    matrix = series.count_matrix(direction)
    probe = FlagConfig(theta=math.inf, variant=Variant.V_BASE, min_orders=min_orders)
    fallback = default_prior(stats, default_concentration)
    scores = np.full(matrix.orders.shape, np.nan)
    for i, aid in enumerate(matrix.article_ids):
        prior = (priors or {}).get(aid, fallback)
        for j in range(matrix.orders.shape[1]):
            n = int(matrix.orders[i, j])
            if n == 0:
                continue
            decision = flag_bayesian(
                ReturnCounts(n, int(matrix.returns[i, j])), stats, prior, probe, direction, aid
            )
            if decision.score is not None:
                scores[i, j] = decision.score
    return ScoreTable(matrix.article_ids, scores)


def _counts_from_flags(flags: np.ndarray) -> Tuple[int, int]:
    ever = flags.any(axis=1)
    first = np.argmax(flags, axis=1)
    cols = np.arange(flags.shape[1])
    after_first = cols[None, :] >= first[:, None]
    stable = ever & np.all(flags | ~after_first, axis=1)
    return int(ever.sum()), int(stable.sum())


def count_flags_N(
    series: SnapshotSeries,
    stats: CategoryStats,
    theta: float,
    priors: Optional[Mapping[str, PriorParams]] = None,
    direction: Direction = Direction.TOO_BIG,
    min_orders: int = 1,
) -> int:
    """Number of distinct articles flagged at any snapshot of the series."""
    table = score_table(series, stats, priors, direction, min_orders)
    return _counts_from_flags(table.flags(theta))[0]


def count_stable_S(
    series: SnapshotSeries,
    stats: CategoryStats,
    theta: float,
    priors: Optional[Mapping[str, PriorParams]] = None,
    direction: Direction = Direction.TOO_BIG,
    min_orders: int = 1,
) -> int:
    """Number of flagged articles whose flag never drops after it is first raised."""
    table = score_table(series, stats, priors, direction, min_orders)
    return _counts_from_flags(table.flags(theta))[1]


def constraint_values(n: int, s: int, n_max: int, s_max: int) -> Tuple[float, float, float]:
    """The three constraint ratios; ``x/0`` is 0 when ``x == 0`` and ``inf`` otherwise."""

    def ratio(num: float, den: float) -> float:
        if den == 0:
            return 0.0 if num == 0 else math.inf
        return num / den

    return ratio(n - s, n), ratio(n - n_max, n_max), ratio(n - s, n_max - s_max)


def satisfies(values: Sequence[float], epsilons: Sequence[float]) -> bool:
    return all(v <= e for v, e in zip(values, epsilons))


@dataclass(frozen=True)
class ThresholdSolution:
    theta_star: float
    theta_max: float
    epsilons: Tuple[float, float, float]
    counts: Tuple[int, int, int, int]
    grid_step: float
    feasible: bool
    direction: Direction = Direction.TOO_BIG
    category_id: str = ""
    n_curve: Tuple[int, ...] = ()

    def to_dict(self) -> dict:
        n, s, n_max, s_max = self.counts
        return {
            "category_id": self.category_id,
            "direction": self.direction.value,
            "theta_star": self.theta_star,
            "theta_max": self.theta_max,
            "epsilons": list(self.epsilons),
            "N_star": n,
            "S_star": s,
            "N_max": n_max,
            "S_max": s_max,
            "grid_step": self.grid_step,
            "feasible": self.feasible,
        }


def optimize_threshold(
    series: SnapshotSeries,
    stats: CategoryStats,
    priors: Optional[Mapping[str, PriorParams]] = None,
    theta_max: float = THETA_MACHINE_EPSILON,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    grid: int = DEFAULT_GRID,
    direction: Direction = Direction.TOO_BIG,
    min_orders: int = 1,
    default_concentration: float = 2.0,
) -> ThresholdSolution:
    """Smallest grid threshold meeting all three stability constraints.

    The grid is ``theta_max * i / grid`` for ``i = 1..grid``.  If no grid
    point is feasible, ``theta_max`` is returned with ``feasible=False``.
    """
    eps1, eps2, eps3 = (float(e) for e in epsilons)
    if not theta_max > 0.0:
        raise ValueError(f"theta_max must be positive, got {theta_max}")
    if not (0.0 < eps1 < 1.0 and 0.0 < eps2 < 1.0 and eps3 >= 0.0):
        raise ValueError(f"invalid epsilons {tuple(epsilons)}")
    if grid < 1:
        raise ValueError("grid must have at least one point")

    table = score_table(series, stats, priors, direction, min_orders, default_concentration)
    n_max, s_max = _counts_from_flags(table.flags(theta_max))
    if n_max == 0:
        raise InsufficientBaselineError(
            f"no {Direction(direction).value} flags at theta_max={theta_max:.6g} "
            f"in category {series.category_id!r}"
        )
    thetas = theta_max * np.arange(1, grid + 1) / grid
    curve = []
    best: Optional[Tuple[float, int, int]] = None
    for theta in thetas:
        n, s = _counts_from_flags(table.flags(float(theta)))
        curve.append(n)
        if best is None and satisfies(constraint_values(n, s, n_max, s_max), (eps1, eps2, eps3)):
            best = (float(theta), n, s)
    feasible = best is not None
    if best is None:
        best = (float(theta_max), n_max, s_max)
    return ThresholdSolution(
        theta_star=best[0],
        theta_max=float(theta_max),
        epsilons=(eps1, eps2, eps3),
        counts=(best[1], best[2], n_max, s_max),
        grid_step=float(theta_max) / grid,
        feasible=feasible,
        direction=Direction(direction),
        category_id=series.category_id,
        n_curve=tuple(curve),
    )


def optimize_category(
    series: SnapshotSeries,
    stats: Mapping[Direction, CategoryStats],
    priors: Optional[Mapping[Direction, Mapping[str, PriorParams]]] = None,
    **kwargs,
) -> Dict[Direction, ThresholdSolution]:
    """Run :func:`optimize_threshold` for both directions of a category."""
    out = {}
    for direction, dstats in stats.items():
        dpriors = (priors or {}).get(direction)
        out[direction] = optimize_threshold(series, dstats, dpriors, direction=direction, **kwargs)
    return out
