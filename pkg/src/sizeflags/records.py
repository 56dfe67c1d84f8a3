"""Article records and cumulative snapshot series shared across the pipeline."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import ReturnCounts
from .errors import ValidationError


class Direction(str, enum.Enum):
    TOO_BIG = "too_big"
    TOO_SMALL = "too_small"


DIRECTIONS = (Direction.TOO_BIG, Direction.TOO_SMALL)


@dataclass(frozen=True)
class Covariates:
    """The four matching confounders used for nearest-neighbor control selection."""

    general_return_rate: float = 0.0
    price: float = 0.0
    discount_rate: float = 0.0
    unknown_return_rate: float = 0.0

    def __post_init__(self):
        for name in ("general_return_rate", "discount_rate", "unknown_return_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.price < 0.0:
            raise ValueError(f"price must be non-negative, got {self.price}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.general_return_rate, self.price, self.discount_rate, self.unknown_return_rate],
            dtype=float,
        )


@dataclass(frozen=True)
class ArticleRecord:
    article_id: str
    category_id: str
    orders: int
    returns_too_big: int
    returns_too_small: int
    covariates: Covariates = field(default_factory=Covariates)
    first_seen: Optional[datetime] = None

    def __post_init__(self):
        if min(self.orders, self.returns_too_big, self.returns_too_small) < 0:
            raise ValueError(f"negative count in article {self.article_id}")
        if self.returns_too_big + self.returns_too_small > self.orders:
            raise ValueError(
                f"article {self.article_id}: size-related returns exceed orders"
            )

    def returns(self, direction: Direction) -> int:
        if Direction(direction) is Direction.TOO_BIG:
            return self.returns_too_big
        return self.returns_too_small

    def counts(self, direction: Direction) -> ReturnCounts:
        return ReturnCounts(self.orders, self.returns(direction))


def utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class CountMatrix:
    """Dense view of a series: rows are articles (sorted ids), columns snapshots."""

    article_ids: Tuple[str, ...]
    orders: np.ndarray
    returns: np.ndarray


@dataclass(frozen=True)
class SnapshotSeries:
    """Time-ordered cumulative snapshots of one category.

    Each snapshot maps ``article_id`` to the article's cumulative record as of
    that timestamp.  An article missing from a snapshot before its first
    appearance has zero counts; missing after it keeps its last counts.
    """

    category_id: str
    timestamps: Tuple[datetime, ...]
    snapshots: Tuple[Mapping[str, ArticleRecord], ...]

    def __post_init__(self):
        if len(self.timestamps) != len(self.snapshots):
            raise ValueError("timestamps and snapshots differ in length")

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def window(self) -> Optional[Tuple[datetime, datetime]]:
        if not self.timestamps:
            return None
        return self.timestamps[0], self.timestamps[-1]

    @property
    def article_ids(self) -> Tuple[str, ...]:
        ids = set()
        for snap in self.snapshots:
            ids.update(snap)
        return tuple(sorted(ids))

    def latest(self) -> Dict[str, ArticleRecord]:
        """Last known record for every article."""
        merged: Dict[str, ArticleRecord] = {}
        for snap in self.snapshots:
            merged.update(snap)
        return merged

    def records_at(self, index: int) -> Dict[str, ArticleRecord]:
        merged: Dict[str, ArticleRecord] = {}
        for snap in self.snapshots[: index + 1]:
            merged.update(snap)
        return merged

    def count_matrix(self, direction: Direction) -> CountMatrix:
        ids = self.article_ids
        row = {a: i for i, a in enumerate(ids)}
        shape = (len(ids), len(self.snapshots))
        orders = np.zeros(shape, dtype=np.int64)
        returns = np.zeros(shape, dtype=np.int64)
        for j, snap in enumerate(self.snapshots):
            if j > 0:
                orders[:, j] = orders[:, j - 1]
                returns[:, j] = returns[:, j - 1]
            for aid, rec in snap.items():
                i = row[aid]
                orders[i, j] = rec.orders
                returns[i, j] = rec.returns(direction)
        return CountMatrix(ids, orders, returns)

    def validate(self) -> None:
        """Check strictly increasing timestamps and non-decreasing cumulative counts."""
        for prev, cur in zip(self.timestamps, self.timestamps[1:]):
            if not cur > prev:
                raise ValidationError(
                    f"snapshot timestamps not strictly increasing: {prev.isoformat()} -> {cur.isoformat()}"
                )
        last: Dict[str, ArticleRecord] = {}
        offenders: List[str] = []
        for snap in self.snapshots:
            for aid, rec in snap.items():
                before = last.get(aid)
                if before is not None and (
                    rec.orders < before.orders
                    or rec.returns_too_big < before.returns_too_big
                    or rec.returns_too_small < before.returns_too_small
                ):
                    offenders.append(aid)
                last[aid] = rec
        if offenders:
            listed = ", ".join(sorted(set(offenders)))
            raise ValidationError(f"cumulative counts decrease for articles: {listed}")


def build_series(
    category_id: str, rows: Sequence[Tuple[datetime, ArticleRecord]]
) -> SnapshotSeries:
    """Group ``(timestamp, record)`` rows into a :class:`SnapshotSeries`."""
    by_ts: Dict[datetime, Dict[str, ArticleRecord]] = {}
    for ts, rec in rows:
        by_ts.setdefault(utc(ts), {})[rec.article_id] = rec
    stamps = tuple(sorted(by_ts))
    return SnapshotSeries(category_id, stamps, tuple(by_ts[t] for t in stamps))


def iter_rows(series: SnapshotSeries) -> Iterator[Tuple[datetime, ArticleRecord]]:
    for ts, snap in zip(series.timestamps, series.snapshots):
        for aid in sorted(snap):
            yield ts, snap[aid]
