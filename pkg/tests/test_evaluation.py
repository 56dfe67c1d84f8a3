import logging
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from sizeflags.errors import DataError
from sizeflags.evaluation import (
    FirstFlag,
    Treatment,
    cold_start_metrics,
    did_effect,
    first_flags,
    nearest_neighbors,
)
from sizeflags.flagging import Variant
from sizeflags.pipeline import run_variant
from sizeflags.records import ArticleRecord, Covariates, Direction, build_series

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)
WEEK = timedelta(weeks=1)
T_FLAG = T0 + 6 * WEEK


def rec(aid, price=0.0, n=0, k=0, general=0.3):
    return ArticleRecord(aid, "C", n, k, 0, Covariates(general, price, 0.1, 0.02))


# -- nearest neighbors --------------------------------------------------------


def test_neighbors_hand_example():
    pool = [rec("a0", 0.0), rec("a1", 1.0), rec("a5", 5.0)]
    got = nearest_neighbors(rec("t", 0.0), pool, m=2)
    assert [r.article_id for r in got] == ["a0", "a1"]


def test_neighbors_clones_tie_break_by_id():
    pool = [rec(f"c{i}") for i in (4, 1, 3, 0, 2)]
    got = nearest_neighbors(rec("t"), pool, m=3)
    assert [r.article_id for r in got] == ["c0", "c1", "c2"]


def test_neighbors_exclude_target_and_default_m():
    pool = [rec(f"p{i:02d}", float(i)) for i in range(15)] + [rec("t", 3.0)]
    got = nearest_neighbors(rec("t", 3.0), pool)
    assert len(got) == 10 and "t" not in {r.article_id for r in got}
    assert got[0].article_id == "p03"


def test_neighbors_small_pool_returns_everything():
    pool = [rec("a", 1.0), rec("b", 2.0)]
    assert len(nearest_neighbors(rec("t"), pool, m=10)) == 2
    assert nearest_neighbors(rec("t"), [], m=3) == []


def test_neighbors_deterministic_under_pool_order():
    rng = np.random.default_rng(0)
    pool = [rec(f"x{i:03d}", float(rng.integers(0, 5)), general=float(rng.uniform())) for i in range(60)]
    target = rec("t", 2.0, general=0.5)
    first = nearest_neighbors(target, pool, m=10)
    rng.shuffle(pool)
    assert nearest_neighbors(target, pool, m=10) == first


# -- DiD ----------------------------------------------------------------------


def panel(paths):
    """Series with snapshots at weeks 0, 6, 12 from ``{aid: (price, [(n, k), ...])}``."""
    rows = []
    for aid, (price, path) in paths.items():
        for j, (n, k) in enumerate(path):
            rows.append((T0 + 6 * j * WEEK, ArticleRecord(aid, "C", n, k, 0, Covariates(0.3, price, 0.1, 0.02))))
    series = build_series("C", rows)
    return series, series.latest()


def test_did_hand_twenty_percent():
    series, latest = panel({"t": (1.0, [(0, 0), (100, 20), (200, 36)]), "c": (1.0, [(0, 0), (100, 20), (200, 40)])})
    report = did_effect([(latest["t"], T_FLAG)], [latest["c"]], series, m=1)
    assert report.srr_effect == pytest.approx(0.20, abs=1e-12)
    assert report.per_article_effects == {"t": pytest.approx(0.20)}


def test_did_equal_shift_is_zero():
    series, latest = panel({"t": (1.0, [(0, 0), (100, 30), (200, 55)]), "c": (1.0, [(0, 0), (100, 20), (200, 35)])})
    report = did_effect([Treatment(latest["t"], T_FLAG)], [latest["c"]], series, m=1)
    assert report.srr_effect == pytest.approx(0.0, abs=1e-12)


def test_did_controls_are_averaged():
    series, latest = panel(
        {
            "t": (1.0, [(0, 0), (100, 20), (200, 36)]),
            "c1": (1.0, [(0, 0), (100, 10), (200, 20)]),
            "c2": (1.0, [(0, 0), (100, 30), (200, 60)]),
            "far": (50.0, [(0, 0), (100, 90), (200, 100)]),
        }
    )
    report = did_effect([(latest["t"], T_FLAG)], [latest[c] for c in ("c1", "c2", "far")], series, m=2)
    assert report.srr_effect == pytest.approx(0.20)


def test_did_exclusion_accounting():
    series, latest = panel(
        {
            "ok": (1.0, [(0, 0), (100, 20), (200, 36)]),
            "zero_pre": (1.0, [(0, 0), (100, 0), (200, 5)]),
            "no_post": (1.0, [(0, 0), (100, 20), (100, 20)]),
            "no_pre": (1.0, [(0, 0), (0, 0), (100, 20)]),
            "c": (1.0, [(0, 0), (100, 20), (200, 40)]),
        }
    )
    treated = [(latest[a], T_FLAG) for a in ("ok", "zero_pre", "no_post", "no_pre")]
    report = did_effect(treated, [latest["c"]], series, m=1)
    assert report.excluded == {"zero_pre": "division_by_zero", "no_post": "no_post_orders", "no_pre": "no_pre_orders"}
    assert len(report.per_article_effects) + len(report.excluded) == report.treated_count == 4
    assert report.srr_effect == pytest.approx(np.mean(list(report.per_article_effects.values())))
    d = report.to_dict()
    assert d["included_count"] == 1 and d["excluded_count"] == 3


def test_did_errors():
    series, latest = panel({"t": (1.0, [(0, 0), (100, 0), (200, 5)]), "c": (1.0, [(0, 0), (100, 20), (200, 40)])})
    with pytest.raises(DataError):
        did_effect([], [latest["c"]], series)
    with pytest.raises(DataError):
        did_effect([(latest["t"], T_FLAG)], [], series)
    with pytest.raises(DataError, match="division_by_zero"):
        did_effect([(latest["t"], T_FLAG)], [latest["c"]], series, m=1)


def test_did_short_pool_flagged(caplog):
    series, latest = panel({"t": (1.0, [(0, 0), (100, 20), (200, 36)]), "c": (1.0, [(0, 0), (100, 20), (200, 40)])})
    with caplog.at_level(logging.WARNING):
        report = did_effect([(latest["t"], T_FLAG)], [latest["c"]], series)
    assert report.short_pool and report.neighbor_count == 10
    assert "fewer than m=10" in caplog.text


# -- cold start ---------------------------------------------------------------


def ff(pairs):
    return {(aid, Direction.TOO_BIG): FirstFlag(n, k, j) for j, (aid, n, k) in enumerate(pairs)}


def test_cold_start_identical_variants():
    flags = ff([("a", 100, 20), ("b", 60, 15), ("c", 30, 9)])
    out = cold_start_metrics({"V_Base": flags, "SizeFlags": dict(flags)})
    v = out.variants["SizeFlags"]
    assert v.overall_orders_reduction == 0.0 and v.shared_orders_reduction == 0.0
    assert v.shared_returns_reduction == 0.0 and v.shared_coverage == 1.0
    assert not out.warnings


def test_cold_start_reductions_and_coverage_warning():
    base = ff([("a", 100, 20), ("b", 60, 15), ("c", 40, 10)])
    fast = ff([("a", 50, 10), ("b", 30, 8), ("z", 10, 3)])
    out = cold_start_metrics({"V_Base": base, "SizeFlags": fast})
    v = out.variants["SizeFlags"]
    assert v.shared_count == 2 and v.shared_coverage == pytest.approx(2 / 3)
    assert v.shared_orders_reduction == pytest.approx(1 - 40 / 80)
    assert v.overall_orders_reduction == pytest.approx(1 - 30 / 60)
    assert v.shared_mean_orders_reduction == pytest.approx(0.5)
    assert any("covers" in w for w in out.warnings)
    recs = out.to_records()
    assert {r["variant"] for r in recs} == {"V_Base", "SizeFlags"}
    assert all(r["baseline"] == "V_Base" for r in recs)


def test_cold_start_no_shared_flags():
    out = cold_start_metrics({"V_Base": ff([("a", 10, 3)]), "V0": ff([("b", 10, 3)])})
    assert out.variants["V0"].shared_orders_reduction is None
    assert any("no flags shared" in w for w in out.warnings)


def test_cold_start_needs_baseline_and_two_variants():
    with pytest.raises(DataError):
        cold_start_metrics({"V0": ff([("a", 1, 1)]), "V_TH": ff([])})
    with pytest.raises(DataError):
        cold_start_metrics({"V_Base": ff([("a", 1, 1)])})


def test_first_flags_from_runs(small_sim):
    run = run_variant(small_sim.series, Variant.V_BASE, keep_history=True)
    first = run.first_flags()
    assert first
    for key, f in first.items():
        assert f.returns <= f.orders
        # the flag was not raised at any earlier snapshot
        for j in range(f.snapshot):
            assert not any(d.flagged for d in run.history[j] if (d.article_id, d.direction) == key)
    assert first_flags(run.history) == first


def test_orders_to_flag_non_decreasing_in_snapshot(small_sim):
    series = small_sim.series
    aid = series.article_ids[0]
    orders = [series.records_at(j)[aid].orders for j in range(len(series))]
    assert orders == sorted(orders)
