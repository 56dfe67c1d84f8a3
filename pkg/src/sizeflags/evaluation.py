"""Impact evaluation: nearest-neighbor difference-in-differences and time-to-flag.

For a treated (flagged) article ``a`` with flag time ``t``::

    g0 = srr(a | pre) - srr(controls | pre)
    g1 = srr(a | post) - srr(controls | post)
    effect(a) = (g0 - g1) / srr(a | pre)

where the controls are the ``m`` never-flagged articles of the category
closest to ``a`` in z-standardized covariate space, ``srr(controls | .)`` is
the plain average of their rates, and the pre/post windows span six weeks on
either side of ``t``.  Positive effects mean the flag reduced returns.
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError
from .flagging import FlagDecision
from .records import ArticleRecord, Direction, SnapshotSeries

log = logging.getLogger(__name__)

DEFAULT_NEIGHBORS = 10
DEFAULT_WINDOW = timedelta(weeks=6)


def _standardizer(records: Sequence[ArticleRecord]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.array([r.covariates.as_array() for r in records], dtype=float)
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0.0] = 1.0
    return center, scale


class _NeighborIndex:
    def __init__(self, pool: Sequence[ArticleRecord], center: np.ndarray, scale: np.ndarray):
        self.pool = list(pool)
        self.center, self.scale = center, scale
        self.x = (np.array([r.covariates.as_array() for r in self.pool]).reshape(-1, 4) - center) / scale
        ids = [r.article_id for r in self.pool]
        rank = {a: i for i, a in enumerate(sorted(ids))}
        self.id_rank = np.array([rank[a] for a in ids])

    def query(self, target: ArticleRecord, m: int) -> List[ArticleRecord]:
        t = (target.covariates.as_array() - self.center) / self.scale
        dist = np.sqrt(((self.x - t) ** 2).sum(axis=1))
        keep = np.array([r.article_id != target.article_id for r in self.pool], dtype=bool)
        order = np.lexsort((self.id_rank, dist))
        order = order[keep[order]]
        return [self.pool[i] for i in order[:m]]


def nearest_neighbors(
    target: ArticleRecord,
    pool: Sequence[ArticleRecord],
    m: int = DEFAULT_NEIGHBORS,
    center: Optional[np.ndarray] = None,
    scale: Optional[np.ndarray] = None,
) -> List[ArticleRecord]:
    """The ``m`` pool articles closest to ``target`` (Euclidean, standardized covariates).

    Standardization uses ``center``/``scale`` when given, otherwise the
    moments of the pool plus the target.  Ties are broken by ``article_id``.
    The target itself is never its own neighbor.  A pool smaller than ``m``
    is returned whole.
    """
    candidates = [r for r in pool if r.article_id != target.article_id]
    if not candidates:
        return []
    if center is None or scale is None:
        center, scale = _standardizer(candidates + [target])
    return _NeighborIndex(candidates, center, scale).query(target, m)


class _Cumulative:
    """Cumulative (orders, returns) of one article as a step function of time."""

    def __init__(self, series: SnapshotSeries, direction: Direction):
        self.stamps = list(series.timestamps)
        matrix = series.count_matrix(direction)
        self.row = {a: i for i, a in enumerate(matrix.article_ids)}
        self.orders = matrix.orders
        self.returns = matrix.returns

    def at(self, article_id: str, ts: datetime) -> Tuple[int, int]:
        j = bisect_right(self.stamps, ts) - 1
        if j < 0 or article_id not in self.row:
            return 0, 0
        i = self.row[article_id]
        return int(self.orders[i, j]), int(self.returns[i, j])

    def window(self, article_id: str, start: datetime, end: datetime) -> Tuple[int, int]:
        n1, k1 = self.at(article_id, end)
        n0, k0 = self.at(article_id, start)
        return n1 - n0, k1 - k0


@dataclass(frozen=True)
class Treatment:
    article: ArticleRecord
    t_flag: datetime
    direction: Direction = Direction.TOO_BIG


@dataclass
class DiDReport:
    srr_effect: float
    per_article_effects: Dict[str, float]
    neighbor_count: int
    treated_count: int
    excluded: Dict[str, str] = field(default_factory=dict)
    short_pool: bool = False

    def to_dict(self) -> dict:
        return {
            "srr_effect": self.srr_effect,
            "neighbor_count": self.neighbor_count,
            "treated_count": self.treated_count,
            "included_count": len(self.per_article_effects),
            "excluded_count": len(self.excluded),
            "excluded": dict(sorted(self.excluded.items())),
            "short_pool": self.short_pool,
        }


def _as_treatment(item) -> Treatment:
    if isinstance(item, Treatment):
        return item
    return Treatment(*item)


def did_effect(
    treated: Iterable,
    control_pool: Sequence[ArticleRecord],
    snapshots: SnapshotSeries,
    m: int = DEFAULT_NEIGHBORS,
    window: timedelta = DEFAULT_WINDOW,
) -> DiDReport:
    """Average relative srr reduction of flagged articles versus matched controls.

    ``treated`` holds :class:`Treatment` items or ``(record, t_flag[, direction])``
    tuples.  Controls are windowed on each treated article's own flag time.
    """
    treated = [_as_treatment(t) for t in treated]
    if not treated:
        raise DataError("no treated articles")
    pool = list(control_pool)
    if not pool:
        raise DataError("empty control pool")
    center, scale = _standardizer(pool + [t.article for t in treated])
    index = _NeighborIndex(pool, center, scale)
    cumulative = {
        d: _Cumulative(snapshots, d) for d in sorted({t.direction for t in treated})
    }
    short_pool = len(pool) < m
    if short_pool:
        log.warning("control pool has %d articles, fewer than m=%d", len(pool), m)

    effects: Dict[str, float] = {}
    excluded: Dict[str, str] = {}
    for item in treated:
        aid = item.article.article_id
        cum = cumulative[item.direction]
        t0, t1 = item.t_flag - window, item.t_flag + window
        n_pre, k_pre = cum.window(aid, t0, item.t_flag)
        n_post, k_post = cum.window(aid, item.t_flag, t1)
        if n_pre == 0:
            excluded[aid] = "no_pre_orders"
            continue
        if n_post == 0:
            excluded[aid] = "no_post_orders"
            continue
        srr_pre, srr_post = k_pre / n_pre, k_post / n_post
        if srr_pre == 0.0:
            excluded[aid] = "division_by_zero"
            continue
        neighbors = index.query(item.article, m)
        pre_rates, post_rates = [], []
        for nb in neighbors:
            nn, kk = cum.window(nb.article_id, t0, item.t_flag)
            if nn:
                pre_rates.append(kk / nn)
            nn, kk = cum.window(nb.article_id, item.t_flag, t1)
            if nn:
                post_rates.append(kk / nn)
        if not pre_rates or not post_rates:
            excluded[aid] = "no_control_data"
            continue
        gamma_pre = srr_pre - float(np.mean(pre_rates))
        gamma_post = srr_post - float(np.mean(post_rates))
        effects[aid] = (gamma_pre - gamma_post) / srr_pre

    if not effects:
        reasons = ", ".join(f"{a}: {r}" for a, r in sorted(excluded.items())[:10])
        raise DataError(f"all treated articles excluded ({reasons})")
    return DiDReport(
        srr_effect=float(np.mean(list(effects.values()))),
        per_article_effects=effects,
        neighbor_count=m,
        treated_count=len(treated),
        excluded=excluded,
        short_pool=short_pool,
    )


# -- time to flag ----------------------------------------------------------

FlagKey = Tuple[str, Direction]


@dataclass(frozen=True)
class FirstFlag:
    orders: int
    returns: int
    snapshot: int


def first_flags(history: Sequence[Sequence[FlagDecision]]) -> Dict[FlagKey, FirstFlag]:
    """Orders and returns at the first snapshot where each article/direction flags."""
    out: Dict[FlagKey, FirstFlag] = {}
    for j, decisions in enumerate(history):
        for d in decisions:
            key = (d.article_id, d.direction)
            if d.flagged and key not in out:
                out[key] = FirstFlag(d.orders, d.returns, j)
    return out


@dataclass(frozen=True)
class VariantColdStart:
    variant: str
    flag_count: int
    median_orders: Optional[float]
    median_returns: Optional[float]
    # relative reductions versus the baseline; None for the baseline itself
    overall_orders_reduction: Optional[float] = None
    overall_returns_reduction: Optional[float] = None
    shared_count: int = 0
    shared_coverage: Optional[float] = None
    shared_orders_reduction: Optional[float] = None
    shared_returns_reduction: Optional[float] = None
    shared_mean_orders_reduction: Optional[float] = None
    shared_mean_returns_reduction: Optional[float] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ColdStartMetrics:
    baseline: str
    variants: Dict[str, VariantColdStart]
    warnings: List[str] = field(default_factory=list)

    def to_records(self) -> List[dict]:
        return [dict(v.to_dict(), baseline=self.baseline) for v in self.variants.values()]


def _median(values: Sequence[int]) -> Optional[float]:
    return float(np.median(values)) if len(values) else None


def _reduction(base: Optional[float], other: Optional[float]) -> Optional[float]:
    if base is None or other is None or base == 0:
        return None
    return 1.0 - other / base


def cold_start_metrics(
    flags: Mapping[str, Mapping[FlagKey, FirstFlag]],
    baseline: str = "V_Base",
    coverage_target: float = 0.95,
) -> ColdStartMetrics:
    """Compare orders/returns needed before the first flag against a baseline variant.

    Each variant is summarized over all its flags (overall set) and over the
    flags it shares with the baseline (shared set).  Reductions are
    ``1 - variant / baseline`` on medians; the shared set also gets the mean of
    per-article relative reductions.
    """
    if baseline not in flags:
        raise DataError(f"baseline variant {baseline!r} missing")
    if len(flags) < 2:
        raise DataError("need at least two variants to compare")
    base = flags[baseline]
    base_orders = [f.orders for f in base.values()]
    base_returns = [f.returns for f in base.values()]
    warnings: List[str] = []
    out: Dict[str, VariantColdStart] = {}
    for name, vflags in flags.items():
        orders = [f.orders for f in vflags.values()]
        returns = [f.returns for f in vflags.values()]
        if name == baseline:
            out[name] = VariantColdStart(name, len(vflags), _median(orders), _median(returns))
            continue
        shared = sorted(set(vflags) & set(base))
        entry = dict(
            variant=name,
            flag_count=len(vflags),
            median_orders=_median(orders),
            median_returns=_median(returns),
            overall_orders_reduction=_reduction(_median(base_orders), _median(orders)),
            overall_returns_reduction=_reduction(_median(base_returns), _median(returns)),
            shared_count=len(shared),
            shared_coverage=len(shared) / len(base) if base else None,
        )
        if shared:
            s_base_n = [base[k].orders for k in shared]
            s_var_n = [vflags[k].orders for k in shared]
            s_base_r = [base[k].returns for k in shared]
            s_var_r = [vflags[k].returns for k in shared]
            entry.update(
                shared_orders_reduction=_reduction(_median(s_base_n), _median(s_var_n)),
                shared_returns_reduction=_reduction(_median(s_base_r), _median(s_var_r)),
                shared_mean_orders_reduction=float(
                    np.mean([1 - v / b for v, b in zip(s_var_n, s_base_n) if b])
                ),
                shared_mean_returns_reduction=float(
                    np.mean([1 - v / b for v, b in zip(s_var_r, s_base_r) if b])
                ),
            )
            if entry["shared_coverage"] is not None and entry["shared_coverage"] < coverage_target:
                warnings.append(
                    f"{name}: shared set covers {entry['shared_coverage']:.1%} of {baseline} flags"
                    f" (< {coverage_target:.0%})"
                )
        else:
            warnings.append(f"{name}: no flags shared with {baseline}; shared metrics omitted")
            log.warning(warnings[-1])
        out[name] = VariantColdStart(**entry)
    return ColdStartMetrics(baseline, out, warnings)
