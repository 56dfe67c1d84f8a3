"""Wiring of model variants: which priors and which threshold each one uses.

=========  ==========================================  ==================
variant    prior sources (first available wins)        threshold
=========  ==========================================  ==================
V0         none (binomial score)                       theta_max
V_HF       human feedback; other articles not scored   theta_max
V_Base     human feedback, default                     theta_max
V_SN       human feedback, visual cue, default         theta_max
V_TH       human feedback, default                     optimized
SizeFlags  human feedback, visual cue, default         optimized
=========  ==========================================  ==================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .core import CategoryStats, PriorParams, compute_category_stats
from .errors import ConfigError
from .evaluation import FirstFlag, first_flags
from .flagging import (
    THETA_MACHINE_EPSILON,
    FlagConfig,
    FlagDecision,
    Variant,
    run_sizeflags,
)
from .priors import (
    DEFAULT_CONCENTRATION,
    ExpertFeedback,
    PriorBounds,
    VisualCue,
    select_prior,
    solve_prior_bounds,
)
from .records import DIRECTIONS, Direction, SnapshotSeries
from .thresholds import DEFAULT_EPSILONS, DEFAULT_GRID, ThresholdSolution, optimize_threshold

FeedbackTable = Mapping[Tuple[str, Direction], ExpertFeedback]
CueTable = Mapping[Tuple[str, Direction], VisualCue]
PriorTable = Dict[Direction, Dict[str, PriorParams]]


def category_stats(
    series: SnapshotSeries, min_orders: int = 1, index: int = -1
) -> Dict[Direction, CategoryStats]:
    """Per-direction statistics over the cumulative counts at snapshot ``index``."""
    records = series.records_at(index % len(series)).values()
    return {
        d: compute_category_stats(
            [r.counts(d) for r in records],
            min_orders=min_orders,
            category_id=series.category_id,
            window=series.window,
        )
        for d in DIRECTIONS
    }


def prior_bounds(
    stats: Mapping[Direction, CategoryStats],
    theta: float,
    pi_interval: Optional[Tuple[float, float]] = None,
) -> Dict[Direction, PriorBounds]:
    return {
        d: solve_prior_bounds(pi_interval or s.pi_interval, theta) for d, s in stats.items()
    }


def build_priors(
    variant: Variant,
    article_ids: Sequence[str],
    stats: Mapping[Direction, CategoryStats],
    bounds: Mapping[Direction, PriorBounds],
    feedback: Optional[FeedbackTable] = None,
    cues: Optional[CueTable] = None,
    concentration: float = DEFAULT_CONCENTRATION,
) -> Optional[PriorTable]:
    variant = Variant(variant)
    if not variant.bayesian:
        return None
    feedback = feedback or {}
    cues = (cues or {}) if variant.uses_cues else {}
    table: PriorTable = {}
    for d in DIRECTIONS:
        table[d] = {
            aid: select_prior(
                aid, feedback.get((aid, d)), cues.get((aid, d)), bounds[d], stats[d], concentration
            )
            for aid in article_ids
        }
    return table


def flag_history(
    series: SnapshotSeries,
    stats: Mapping[Direction, CategoryStats],
    priors: Optional[PriorTable],
    config: FlagConfig,
    article_ids: Optional[Sequence[str]] = None,
    concentration: float = DEFAULT_CONCENTRATION,
) -> List[List[FlagDecision]]:
    """Decisions at every snapshot, with statistics held fixed over the window."""
    keep = set(article_ids) if article_ids is not None else None
    out = []
    for j in range(len(series)):
        records = [
            r for r in series.records_at(j).values() if keep is None or r.article_id in keep
        ]
        out.append(run_sizeflags(records, stats, priors, config, concentration))
    return out


@dataclass
class VariantRun:
    variant: Variant
    stats: Dict[Direction, CategoryStats]
    bounds: Dict[Direction, PriorBounds]
    config: FlagConfig
    priors: Optional[PriorTable]
    decisions: List[FlagDecision]
    solutions: Dict[Direction, ThresholdSolution] = field(default_factory=dict)
    history: Optional[List[List[FlagDecision]]] = None

    def first_flags(self) -> Dict[Tuple[str, Direction], FirstFlag]:
        if self.history is None:
            raise ValueError("run was made without keep_history")
        return first_flags(self.history)

    def final_decisions(self) -> List[FlagDecision]:
        """First raised decision per article/direction, else its last decision."""
        if self.history is None:
            return list(self.decisions)
        chosen: Dict[Tuple[str, Direction], FlagDecision] = {}
        for decisions in self.history:
            for d in decisions:
                key = (d.article_id, d.direction)
                if key not in chosen or not chosen[key].flagged:
                    chosen[key] = d
        return [chosen[k] for k in sorted(chosen)]


def run_variant(
    series: SnapshotSeries,
    variant: Variant,
    feedback: Optional[FeedbackTable] = None,
    cues: Optional[CueTable] = None,
    theta_max: float = THETA_MACHINE_EPSILON,
    theta: Optional[float] = None,
    optimize: Optional[bool] = None,
    history: Optional[SnapshotSeries] = None,
    history_feedback: Optional[FeedbackTable] = None,
    history_cues: Optional[CueTable] = None,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    grid: int = DEFAULT_GRID,
    min_orders: int = 1,
    concentration: float = DEFAULT_CONCENTRATION,
    pi_interval: Optional[Tuple[float, float]] = None,
    keep_history: bool = False,
) -> VariantRun:
    """Flag the latest snapshot of ``series`` under ``variant``.

    ``theta`` fixes the threshold outright.  Otherwise variants with
    optimized thresholds (or any variant with ``optimize=True``) calibrate
    one threshold per direction on ``history`` (default: ``series`` itself);
    the rest use ``theta_max``.  Prior bounds are always solved at
    ``theta_max``.
    """
    variant = Variant(variant)
    if len(series) == 0:
        raise ConfigError("cannot run on an empty snapshot series")
    if variant.uses_cues and not cues:
        raise ConfigError(f"variant {variant.value} needs visual cues")
    stats = category_stats(series, min_orders)
    bounds = prior_bounds(stats, theta_max, pi_interval)
    ids = series.article_ids
    priors = build_priors(variant, ids, stats, bounds, feedback, cues, concentration)
    scored_ids = None
    if variant is Variant.V_HF:
        scored_ids = sorted({aid for aid, _ in (feedback or {})})

    solutions: Dict[Direction, ThresholdSolution] = {}
    if optimize is None:
        optimize = variant.optimized_threshold and theta is None
    if theta is not None:
        config = FlagConfig(theta=theta, variant=variant, min_orders=min_orders)
    elif optimize:
        hist = history if history is not None else series
        if history is None:
            hstats, hbounds, hpriors = stats, bounds, priors
        else:
            hstats = category_stats(hist, min_orders)
            hbounds = prior_bounds(hstats, theta_max, pi_interval)
            hpriors = build_priors(
                variant, hist.article_ids, hstats, hbounds,
                history_feedback, history_cues, concentration,
            )
        for d in DIRECTIONS:
            solutions[d] = optimize_threshold(
                hist,
                hstats[d],
                (hpriors or {}).get(d),
                theta_max=theta_max,
                epsilons=epsilons,
                grid=grid,
                direction=d,
                min_orders=min_orders,
                default_concentration=concentration,
            )
        config = FlagConfig(
            theta=theta_max,
            variant=variant,
            min_orders=min_orders,
            theta_by_direction={d: s.theta_star for d, s in solutions.items()},
        )
    else:
        config = FlagConfig(theta=theta_max, variant=variant, min_orders=min_orders)

    hist_decisions = None
    if keep_history:
        hist_decisions = flag_history(series, stats, priors, config, scored_ids, concentration)
        decisions = hist_decisions[-1]
    else:
        records = [
            r for r in series.latest().values() if scored_ids is None or r.article_id in scored_ids
        ]
        decisions = run_sizeflags(records, stats, priors, config, concentration)
    return VariantRun(variant, stats, bounds, config, priors, decisions, solutions, hist_decisions)
