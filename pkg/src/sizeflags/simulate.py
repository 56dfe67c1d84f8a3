"""Synthetic catalog categories with known size-issue ground truth.

Each article gets a true size-related return rate per direction, drawn from a
"normal" Beta or, with probability ``issue_fraction``, from a shifted "issue"
Beta.  Weekly orders are Poisson; each order ends as a too-big return, a
too-small return, or anything else, with multinomial probabilities given by
the true rates.  Snapshots are cumulative, one per week.

Human feedback and visual-cue streams are noisy functions of the truth:
verdicts are right with probability ``feedback_accuracy`` and the cue is the
article's percentile of true rate within its category plus Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .errors import DataError
from .flagging import FlagDecision
from .priors import ExpertFeedback, Verdict, VisualCue
from .records import DIRECTIONS, ArticleRecord, Covariates, Direction, SnapshotSeries

EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 42
    article_count: int = 1000
    issue_fraction: float = 0.05
    base_rate: Tuple[float, float] = (2.0, 18.0)
    issue_rate: Tuple[float, float] = (12.0, 28.0)
    weekly_order_rate: float = 20.0
    weeks: int = 8
    category_id: str = "C1"
    start: datetime = EPOCH
    # covariate model: lognormal price, Beta-distributed rates
    price_log_mean: float = 3.5
    price_log_sd: float = 0.5
    discount: Tuple[float, float] = (2.0, 8.0)
    general_return: Tuple[float, float] = (8.0, 12.0)
    unknown_return: Tuple[float, float] = (1.0, 30.0)
    feedback_fraction: float = 0.01
    feedback_accuracy: float = 0.9
    feedback_verdicts: int = 3
    cue_fraction: float = 1.0
    cue_noise: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.issue_fraction <= 1.0:
            raise ValueError("issue_fraction must lie in [0, 1]")
        if min(*self.base_rate, *self.issue_rate) <= 0.0:
            raise ValueError("Beta shape parameters must be positive")
        if self.weekly_order_rate <= 0.0 or self.weeks < 1 or self.article_count < 1:
            raise ValueError("order rate, weeks and article count must be positive")


def _beta_moments(shape: Tuple[float, float]) -> Tuple[float, float]:
    a, b = shape
    mean = a / (a + b)
    var = a * b / ((a + b) ** 2 * (a + b + 1.0))
    return mean, var


def mixture_moments(config: SimConfig) -> Tuple[float, float]:
    """Mean and standard deviation of the true-rate mixture distribution."""
    f = config.issue_fraction
    m0, v0 = _beta_moments(config.base_rate)
    m1, v1 = _beta_moments(config.issue_rate)
    mean = (1 - f) * m0 + f * m1
    second = (1 - f) * (v0 + m0 ** 2) + f * (v1 + m1 ** 2)
    return mean, float(np.sqrt(max(second - mean ** 2, 0.0)))


@dataclass(frozen=True)
class TruthEntry:
    srr_true: Mapping[Direction, float]
    has_issue: Mapping[Direction, bool]
    planted: Mapping[Direction, bool]


@dataclass(frozen=True)
class GroundTruth:
    entries: Mapping[str, TruthEntry]
    pi_true: float
    sigma_true: float

    def issues(self, direction: Optional[Direction] = None) -> set:
        dirs = DIRECTIONS if direction is None else (Direction(direction),)
        return {
            (aid, d) for aid, e in self.entries.items() for d in dirs if e.has_issue[d]
        }


@dataclass(frozen=True)
class SimResult:
    series: SnapshotSeries
    truth: GroundTruth
    feedback: Tuple[ExpertFeedback, ...] = ()
    cues: Tuple[VisualCue, ...] = ()


def _covariates(rng: np.random.Generator, config: SimConfig, count: int) -> List[Covariates]:
    price = np.round(rng.lognormal(config.price_log_mean, config.price_log_sd, count), 2)
    discount = rng.beta(*config.discount, count)
    general = rng.beta(*config.general_return, count)
    unknown = rng.beta(*config.unknown_return, count)
    return [
        Covariates(float(g), float(p), float(d), float(u))
        for g, p, d, u in zip(general, price, discount, unknown)
    ]


def _feedback_verdicts(
    rng: np.random.Generator, has_issue: bool, count: int, accuracy: float
) -> Tuple[Verdict, ...]:
    out = []
    for _ in range(count):
        correct = rng.random() < accuracy
        if has_issue == correct:
            out.append(
                Verdict.CERTAIN_SIZE_ISSUE if rng.random() < 0.6 else Verdict.POTENTIAL_SIZE_ISSUE
            )
        else:
            out.append(Verdict.GOOD_FIT)
    return tuple(out)


def generate(config: SimConfig = SimConfig()) -> SimResult:
    """Simulate one category.  Identical configs give identical results."""
    rng = np.random.default_rng(config.seed)
    count = config.article_count
    ids = [f"A{i:06d}" for i in range(count)]

    rates: Dict[Direction, np.ndarray] = {}
    planted: Dict[Direction, np.ndarray] = {}
    for d in DIRECTIONS:
        issue = rng.random(count) < config.issue_fraction
        r = np.where(
            issue, rng.beta(*config.issue_rate, count), rng.beta(*config.base_rate, count)
        )
        rates[d], planted[d] = r, issue
    total = rates[Direction.TOO_BIG] + rates[Direction.TOO_SMALL]
    scale = np.where(total > 0.95, 0.95 / np.maximum(total, 1e-12), 1.0)
    for d in DIRECTIONS:
        rates[d] = rates[d] * scale

    covs = _covariates(rng, config, count)

    pi_true, sigma_true = mixture_moments(config)
    cut = pi_true + sigma_true
    entries = {
        aid: TruthEntry(
            srr_true={d: float(rates[d][i]) for d in DIRECTIONS},
            has_issue={d: bool(rates[d][i] >= cut) for d in DIRECTIONS},
            planted={d: bool(planted[d][i]) for d in DIRECTIONS},
        )
        for i, aid in enumerate(ids)
    }

    probs = np.stack(
        [rates[Direction.TOO_BIG], rates[Direction.TOO_SMALL], 1.0 - total * scale], axis=1
    )
    probs = np.clip(probs, 0.0, 1.0)
    probs /= probs.sum(axis=1, keepdims=True)
    cum = np.zeros((count, 3), dtype=np.int64)
    stamps = []
    snapshots = []
    for week in range(1, config.weeks + 1):
        orders = rng.poisson(config.weekly_order_rate, count)
        cum += rng.multinomial(orders, probs)
        ts = config.start + timedelta(weeks=week)
        stamps.append(ts)
        snap = {}
        for i, aid in enumerate(ids):
            snap[aid] = ArticleRecord(
                article_id=aid,
                category_id=config.category_id,
                orders=int(cum[i].sum()),
                returns_too_big=int(cum[i, 0]),
                returns_too_small=int(cum[i, 1]),
                covariates=covs[i],
                first_seen=stamps[0],
            )
        snapshots.append(snap)
    series = SnapshotSeries(config.category_id, tuple(stamps), tuple(snapshots))

    feedback: List[ExpertFeedback] = []
    cues: List[VisualCue] = []
    for d in DIRECTIONS:
        percentile = np.empty(count)
        percentile[np.argsort(rates[d], kind="stable")] = np.arange(count) / max(count - 1, 1)
        has_fb = rng.random(count) < config.feedback_fraction
        has_cue = rng.random(count) < config.cue_fraction
        noise = rng.normal(0.0, config.cue_noise, count)
        for i, aid in enumerate(ids):
            if has_fb[i]:
                verdicts = _feedback_verdicts(
                    rng, entries[aid].has_issue[d], config.feedback_verdicts, config.feedback_accuracy
                )
                feedback.append(ExpertFeedback(aid, verdicts, d))
            if has_cue[i]:
                p = float(np.clip(percentile[i] + noise[i], 0.0, 1.0))
                cues.append(VisualCue(aid, p, d))

    truth = GroundTruth(entries, pi_true, sigma_true)
    return SimResult(series, truth, tuple(feedback), tuple(cues))


@dataclass(frozen=True)
class TruthScore:
    precision: Optional[float]
    recall: float
    true_positives: int
    false_positives: int
    false_negatives: int
    orders_to_flag: Tuple[int, ...]
    returns_to_flag: Tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "median_orders_to_flag": float(np.median(self.orders_to_flag)) if self.orders_to_flag else None,
            "median_returns_to_flag": float(np.median(self.returns_to_flag)) if self.returns_to_flag else None,
        }


def score_against_truth(decisions: Iterable[FlagDecision], truth: GroundTruth) -> TruthScore:
    """Precision, recall and time-to-flag of per-(article, direction) decisions.

    Each decision should be the first raised flag of its article/direction, or
    its final decision if it never flagged.  ``precision`` is ``None`` when
    nothing was flagged.
    """
    decisions = list(decisions)
    seen = {d.article_id for d in decisions}
    if seen != set(truth.entries):
        raise DataError(
            f"decisions cover {len(seen)} articles, truth covers {len(truth.entries)}; sets differ"
        )
    flagged = {(d.article_id, d.direction): d for d in decisions if d.flagged}
    dirs = {d.direction for d in decisions}
    actual = {key for key in truth.issues() if key[1] in dirs}
    tp_keys = sorted(k for k in flagged if k in actual)
    tp, fp = len(tp_keys), len(flagged) - len(tp_keys)
    fn = len(actual) - tp
    return TruthScore(
        precision=tp / len(flagged) if flagged else None,
        recall=tp / len(actual) if actual else 0.0,
        true_positives=tp,
        false_positives=fp,
        false_negatives=fn,
        orders_to_flag=tuple(flagged[k].orders for k in tp_keys),
        returns_to_flag=tuple(flagged[k].returns for k in tp_keys),
    )


@dataclass(frozen=True)
class DiDSimConfig:
    """Treated/control panel for checking the DiD estimator.

    Treated articles get a flag at week ``flag_week``; afterwards their rate
    drops by ``effect * base_rate``.  Every article shares the additive
    ``trend`` after the flag week, so trends are parallel by construction.
    Base rates depend on the covariates, so nearest neighbors are informative.
    """

    seed: int = 7
    treated: int = 1000
    controls: int = 3000
    weeks: int = 16
    flag_week: int = 8
    weekly_order_rate: float = 500.0
    effect: float = 0.05
    trend: float = 0.01
    rate_noise: float = 0.02
    category_id: str = "C1"
    start: datetime = EPOCH


@dataclass(frozen=True)
class DiDPanel:
    series: SnapshotSeries
    treated: Tuple[Tuple[ArticleRecord, datetime, Direction], ...]
    control_pool: Tuple[ArticleRecord, ...]
    effect: float


def generate_did_panel(config: DiDSimConfig = DiDSimConfig()) -> DiDPanel:
    rng = np.random.default_rng(config.seed)
    total = config.treated + config.controls
    ids = [f"T{i:06d}" if i < config.treated else f"K{i:06d}" for i in range(total)]
    covs = _covariates(rng, SimConfig(), total)
    general = np.array([c.general_return_rate for c in covs])
    # treated articles sit higher on the rate scale, as flagged articles would
    base = 0.1 + 0.4 * (general - 0.4) + rng.normal(0.0, config.rate_noise, total)
    base[: config.treated] += 0.08
    base = np.clip(base, 0.05, 0.6)

    is_treated = np.arange(total) < config.treated
    cum_orders = np.zeros(total, dtype=np.int64)
    cum_returns = np.zeros(total, dtype=np.int64)
    stamps, snapshots = [], []
    for week in range(1, config.weeks + 1):
        rate = base.copy()
        if week > config.flag_week:
            rate = rate + config.trend
            rate = np.where(is_treated, rate - config.effect * base, rate)
        rate = np.clip(rate, 0.0, 1.0)
        orders = rng.poisson(config.weekly_order_rate, total)
        cum_orders += orders
        cum_returns += rng.binomial(orders, rate)
        ts = config.start + timedelta(weeks=week)
        stamps.append(ts)
        snapshots.append(
            {
                aid: ArticleRecord(aid, config.category_id, int(cum_orders[i]), int(cum_returns[i]), 0, covs[i], stamps[0])
                for i, aid in enumerate(ids)
            }
        )
    series = SnapshotSeries(config.category_id, tuple(stamps), tuple(snapshots))
    latest = snapshots[-1]
    t_flag = config.start + timedelta(weeks=config.flag_week)
    treated = tuple((latest[a], t_flag, Direction.TOO_BIG) for a in ids[: config.treated])
    controls = tuple(latest[a] for a in ids[config.treated :])
    return DiDPanel(series, treated, controls, config.effect)
