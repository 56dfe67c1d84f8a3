"""Line-delimited JSON readers and writers, and the run configuration.

Every file is one JSON object per line.  Writers use sorted keys and compact
separators so identical inputs give byte-identical files.  Timestamps are
ISO-8601 UTC strings with a ``Z`` suffix.

Snapshot rows::

    {"snapshot_ts": "2024-01-08T00:00:00Z", "article_id": "A1", "category_id": "C1",
     "orders": 40, "returns_too_big": 3, "returns_too_small": 1, "price": 29.9,
     "discount_rate": 0.1, "general_return_rate": 0.4, "unknown_return_rate": 0.02}

Feedback rows carry ``article_id``, ``direction`` and either ``verdicts`` (a
list) or a single ``verdict``; cue rows carry ``article_id``, ``direction``
and ``size_issue_probability``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from .errors import ConfigError, ParseError, ValidationError
from .flagging import Variant
from .priors import ExpertFeedback, Verdict, VisualCue
from .records import ArticleRecord, Covariates, Direction, SnapshotSeries, utc
from .simulate import GroundTruth, TruthEntry

DATA_DIR_ENV = "SIZEFLAGS_DATA_DIR"

SNAPSHOT_FIELDS = (
    "snapshot_ts",
    "article_id",
    "category_id",
    "orders",
    "returns_too_big",
    "returns_too_small",
    "price",
    "discount_rate",
    "general_return_rate",
    "unknown_return_rate",
)
_COUNT_FIELDS = ("orders", "returns_too_big", "returns_too_small")
_COVARIATE_FIELDS = ("general_return_rate", "price", "discount_rate", "unknown_return_rate")

FeedbackTable = Dict[Tuple[str, Direction], ExpertFeedback]
CueTable = Dict[Tuple[str, Direction], VisualCue]


class IngestWarning(UserWarning):
    """Recoverable oddity in an input file (empty file, duplicate rows)."""


def resolve_path(path) -> Path:
    """Relative paths resolve against ``$SIZEFLAGS_DATA_DIR`` when it is set."""
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def format_ts(ts: datetime) -> str:
    return utc(ts).strftime("%Y-%m-%dT%H:%M:%S.%fZ").replace(".000000Z", "Z")


def parse_ts(text: str) -> datetime:
    if not isinstance(text, str):
        raise ValueError(f"timestamp must be a string, got {text!r}")
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


def read_jsonl(path) -> Iterator[Tuple[int, dict]]:
    """Yield ``(line_number, object)`` for every non-blank line."""
    path = resolve_path(path)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno, path=str(path)) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line=lineno, path=str(path))
            yield lineno, obj


def write_jsonl(path, records: Iterable[Mapping[str, Any]]) -> int:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")
            count += 1
    return count


# ---------------------------------------------------------------- snapshots


def _int_field(obj: dict, name: str, lineno: int, path) -> int:
    value = obj.get(name)
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ParseError(f"field {name!r} must be an integer, got {value!r}", lineno, path)
    return value


def _float_field(obj: dict, name: str, lineno: int, path) -> float:
    value = obj.get(name, 0.0)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ParseError(f"field {name!r} must be a finite number, got {value!r}", lineno, path)
    return float(value)


def _parse_snapshot_row(obj: dict, lineno: int, path) -> Tuple[datetime, ArticleRecord]:
    for name in ("snapshot_ts", "article_id", "category_id", *_COUNT_FIELDS):
        if name not in obj:
            raise ParseError(f"missing field {name!r}", lineno, path)
    try:
        ts = parse_ts(obj["snapshot_ts"])
    except ValueError as exc:
        raise ParseError(f"bad snapshot_ts: {exc}", lineno, path) from None
    counts = {n: _int_field(obj, n, lineno, path) for n in _COUNT_FIELDS}
    covs = {n: _float_field(obj, n, lineno, path) for n in _COVARIATE_FIELDS}
    try:
        record = ArticleRecord(
            article_id=str(obj["article_id"]),
            category_id=str(obj["category_id"]),
            covariates=Covariates(**covs),
            **counts,
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno, path) from None
    return ts, record


def ingest_snapshots(
    path,
    categories: Optional[Sequence[str]] = None,
    window: Optional[Tuple[datetime, datetime]] = None,
) -> Dict[str, SnapshotSeries]:
    """Read a snapshot file into one :class:`SnapshotSeries` per category.

    ``first_seen`` of each record is the first timestamp at which its article
    appears.  Cumulative counts must not decrease between snapshots;
    violations raise :class:`ValidationError` naming the articles and lines.
    """
    path = resolve_path(path)
    keep = set(categories) if categories else None
    rows: Dict[str, Dict[datetime, Dict[str, Tuple[int, ArticleRecord]]]] = {}
    for lineno, obj in read_jsonl(path):
        ts, rec = _parse_snapshot_row(obj, lineno, str(path))
        if keep is not None and rec.category_id not in keep:
            continue
        if window is not None and not (utc(window[0]) <= ts <= utc(window[1])):
            continue
        snap = rows.setdefault(rec.category_id, {}).setdefault(ts, {})
        if rec.article_id in snap:
            raise ValidationError(
                f"{path}:{lineno}: duplicate row for article {rec.article_id} at {format_ts(ts)} "
                f"(first seen on line {snap[rec.article_id][0]})"
            )
        snap[rec.article_id] = (lineno, rec)

    if not rows:
        warnings.warn(f"no snapshot rows in {path}", IngestWarning, stacklevel=2)
        return {}

    out = {}
    for cat in sorted(rows):
        by_ts = rows[cat]
        stamps = sorted(by_ts)
        first_seen: Dict[str, datetime] = {}
        last: Dict[str, Tuple[int, ArticleRecord]] = {}
        problems: List[str] = []
        snapshots = []
        for ts in stamps:
            snap = {}
            for aid in sorted(by_ts[ts]):
                lineno, rec = by_ts[ts][aid]
                prev = last.get(aid)
                if prev is not None and any(
                    getattr(rec, n) < getattr(prev[1], n) for n in _COUNT_FIELDS
                ):
                    problems.append(f"{aid} (lines {prev[0]} -> {lineno})")
                first_seen.setdefault(aid, ts)
                last[aid] = (lineno, rec)
                snap[aid] = ArticleRecord(
                    rec.article_id,
                    rec.category_id,
                    rec.orders,
                    rec.returns_too_big,
                    rec.returns_too_small,
                    rec.covariates,
                    first_seen[aid],
                )
            snapshots.append(snap)
        if problems:
            raise ValidationError(
                f"{path}: cumulative counts decrease in category {cat}: " + ", ".join(problems)
            )
        series = SnapshotSeries(cat, tuple(stamps), tuple(snapshots))
        series.validate()
        out[cat] = series
    return out


def snapshot_rows(series: SnapshotSeries) -> Iterator[dict]:
    for ts, snap in zip(series.timestamps, series.snapshots):
        stamp = format_ts(ts)
        for aid in sorted(snap):
            rec = snap[aid]
            c = rec.covariates
            yield {
                "snapshot_ts": stamp,
                "article_id": rec.article_id,
                "category_id": rec.category_id,
                "orders": rec.orders,
                "returns_too_big": rec.returns_too_big,
                "returns_too_small": rec.returns_too_small,
                "price": c.price,
                "discount_rate": c.discount_rate,
                "general_return_rate": c.general_return_rate,
                "unknown_return_rate": c.unknown_return_rate,
            }


def write_snapshots(path, series: Iterable[SnapshotSeries]) -> int:
    ordered = sorted(series, key=lambda s: s.category_id)
    return write_jsonl(path, (row for s in ordered for row in snapshot_rows(s)))


# ---------------------------------------------------------- feedback & cues


def _direction(obj: dict, lineno: int, path) -> Direction:
    try:
        return Direction(obj.get("direction", Direction.TOO_BIG.value))
    except ValueError:
        raise ParseError(f"unknown direction {obj.get('direction')!r}", lineno, path) from None


def ingest_feedback(path) -> FeedbackTable:
    """Expert verdicts keyed by ``(article_id, direction)``.

    Several rows for the same key pool their verdicts.
    """
    path = resolve_path(path)
    pooled: Dict[Tuple[str, Direction], List[Verdict]] = {}
    for lineno, obj in read_jsonl(path):
        if "article_id" not in obj:
            raise ParseError("missing field 'article_id'", lineno, str(path))
        raw = obj.get("verdicts", obj.get("verdict"))
        if isinstance(raw, str):
            raw = [raw]
        if not raw or not isinstance(raw, list):
            raise ParseError("row needs 'verdicts' (list) or 'verdict'", lineno, str(path))
        verdicts = []
        for text in raw:
            try:
                verdicts.append(Verdict.parse(str(text)))
            except ValueError:
                raise ParseError(f"unknown verdict {text!r}", lineno, str(path)) from None
        key = (str(obj["article_id"]), _direction(obj, lineno, str(path)))
        pooled.setdefault(key, []).extend(verdicts)
    if not pooled:
        warnings.warn(f"no feedback rows in {path}", IngestWarning, stacklevel=2)
    return {k: ExpertFeedback(k[0], tuple(v), k[1]) for k, v in sorted(pooled.items())}


def ingest_cues(path) -> CueTable:
    """Visual-cue probabilities keyed by ``(article_id, direction)``; last row wins."""
    path = resolve_path(path)
    out: CueTable = {}
    for lineno, obj in read_jsonl(path):
        if "article_id" not in obj:
            raise ParseError("missing field 'article_id'", lineno, str(path))
        p = _float_field(obj, "size_issue_probability", lineno, str(path))
        if not 0.0 <= p <= 1.0:
            raise ValidationError(
                f"{path}:{lineno}: size_issue_probability {p} outside [0, 1]"
            )
        key = (str(obj["article_id"]), _direction(obj, lineno, str(path)))
        if key in out:
            warnings.warn(
                f"{path}:{lineno}: duplicate cue for {key[0]}/{key[1].value}; keeping the last",
                IngestWarning,
                stacklevel=2,
            )
        out[key] = VisualCue(key[0], p, key[1])
    if not out:
        warnings.warn(f"no cue rows in {path}", IngestWarning, stacklevel=2)
    return dict(sorted(out.items()))


def write_feedback(path, feedback: Iterable[ExpertFeedback]) -> int:
    rows = sorted(
        (
            {
                "article_id": f.article_id,
                "direction": f.direction.value,
                "verdicts": [v.value for v in f.verdicts],
            }
            for f in feedback
        ),
        key=lambda r: (r["article_id"], r["direction"]),
    )
    return write_jsonl(path, rows)


def write_cues(path, cues: Iterable[VisualCue]) -> int:
    rows = sorted(
        (
            {
                "article_id": c.article_id,
                "direction": c.direction.value,
                "size_issue_probability": c.size_issue_probability,
            }
            for c in cues
        ),
        key=lambda r: (r["article_id"], r["direction"]),
    )
    return write_jsonl(path, rows)


def write_truth(path, truth: GroundTruth) -> int:
    rows = []
    for aid in sorted(truth.entries):
        e = truth.entries[aid]
        for d in sorted(e.srr_true, key=lambda x: x.value):
            rows.append(
                {
                    "article_id": aid,
                    "direction": d.value,
                    "srr_true": e.srr_true[d],
                    "has_issue": e.has_issue[d],
                    "planted": e.planted[d],
                    "pi_true": truth.pi_true,
                    "sigma_true": truth.sigma_true,
                }
            )
    return write_jsonl(path, rows)


def ingest_truth(path) -> GroundTruth:
    path = resolve_path(path)
    table: Dict[str, Dict[str, dict]] = {}
    pi = sigma = None
    for lineno, obj in read_jsonl(path):
        try:
            d = Direction(obj["direction"])
            table.setdefault(str(obj["article_id"]), {})[d] = obj
            pi, sigma = float(obj["pi_true"]), float(obj["sigma_true"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad truth row: {exc}", lineno, str(path)) from None
    entries = {
        aid: TruthEntry(
            srr_true={d: float(r["srr_true"]) for d, r in rows.items()},
            has_issue={d: bool(r["has_issue"]) for d, r in rows.items()},
            planted={d: bool(r.get("planted", False)) for d, r in rows.items()},
        )
        for aid, rows in table.items()
    }
    return GroundTruth(entries, pi if pi is not None else 0.0, sigma if sigma is not None else 0.0)


# ---------------------------------------------------------------- run config


THETA_SOURCES = ("fixed", "machine_epsilon", "optimized")


def file_digest(path) -> Optional[str]:
    if path is None:
        return None
    h = hashlib.sha256()
    with open(resolve_path(path), "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run's output.

    The fingerprint hashes the settings and the *contents* of the input files,
    not their paths, so a run can be reproduced from a copy of the data.
    """

    command: str
    variant: Optional[str] = None
    theta_source: Optional[str] = None
    theta: Optional[float] = None
    epsilons: Tuple[float, float, float] = (0.2, 0.05, 1.5)
    grid: int = 256
    pi_interval: Optional[Tuple[float, float]] = None
    bounds_theta: Optional[float] = None
    categories: Tuple[str, ...] = ()
    window: Optional[Tuple[str, str]] = None
    min_orders: int = 1
    concentration: float = 2.0
    seed: Optional[int] = None
    inputs: Tuple[Tuple[str, Optional[str]], ...] = ()
    options: Tuple[Tuple[str, Any], ...] = field(default_factory=tuple)

    def validate(self) -> "RunConfig":
        if self.variant is not None:
            try:
                variant = Variant(self.variant)
            except ValueError:
                raise ConfigError(f"unknown variant {self.variant!r}") from None
            have = {name for name, _ in self.inputs}
            if variant.uses_cues and "cues" not in have:
                raise ConfigError(f"variant {variant.value} needs a cue file (--cues)")
            if variant is Variant.V_HF and "feedback" not in have:
                raise ConfigError("variant V_HF needs a feedback file (--feedback)")
        if self.theta_source is not None and self.theta_source not in THETA_SOURCES:
            raise ConfigError(f"theta source must be one of {THETA_SOURCES}")
        if self.theta_source == "fixed" and (self.theta is None or not self.theta > 0):
            raise ConfigError("a fixed threshold must be a positive number")
        if self.pi_interval is not None:
            lo, hi = self.pi_interval
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"invalid plausibility interval {self.pi_interval}")
        if self.min_orders < 1:
            raise ConfigError("min_orders must be at least 1")
        if self.concentration < 0:
            raise ConfigError("concentration must be non-negative")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inputs"] = {k: v for k, v in self.inputs}
        d["options"] = {k: v for k, v in self.options}
        return d

    def fingerprint(self) -> str:
        return hashlib.sha256(dumps(self.to_dict()).encode("utf-8")).hexdigest()


def stamp(records: Iterable[Mapping[str, Any]], record_type: str, fingerprint: str) -> List[dict]:
    """Attach ``record_type`` and ``config_fingerprint`` to every record."""
    out = []
    for rec in records:
        row = dict(rec)
        row["record_type"] = record_type
        row["config_fingerprint"] = fingerprint
        out.append(row)
    return out
