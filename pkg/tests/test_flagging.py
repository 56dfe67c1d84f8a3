import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sizeflags.core import CategoryStats, PriorParams, Provenance, ReturnCounts
from sizeflags.errors import ConfigError
from sizeflags.flagging import (
    SINGLE_PRECISION_EPS,
    THETA_MACHINE_EPSILON,
    FlagConfig,
    Reason,
    Variant,
    flag_bayesian,
    flag_binomial,
    flagged_articles,
    run_sizeflags,
)
from sizeflags.records import ArticleRecord, Direction


def stats(pi=0.1, sigma=0.05):
    return CategoryStats(pi, sigma, (max(0.0, pi - sigma), min(1.0, pi + sigma)))


BASE = FlagConfig(theta=15.0)


def test_machine_epsilon_threshold():
    assert SINGLE_PRECISION_EPS == 2.0 ** -23
    assert THETA_MACHINE_EPSILON == pytest.approx(15.9424, abs=1e-4)
    cfg = FlagConfig.from_epsilon(2.0 ** -23)
    assert cfg.theta == pytest.approx(THETA_MACHINE_EPSILON, abs=1e-12)
    assert abs(cfg.theta + math.log(cfg.epsilon_bound)) <= 1e-9


@pytest.mark.parametrize("theta", [0.0, -1.0])
def test_flag_config_needs_positive_theta(theta):
    with pytest.raises(ConfigError):
        FlagConfig(theta=theta)


@pytest.mark.parametrize("eps", [0.0, 1.0, 2.0])
def test_flag_config_epsilon_range(eps):
    with pytest.raises(ConfigError):
        FlagConfig.from_epsilon(eps)


def test_binomial_rate_condition_fails():
    d = flag_binomial(ReturnCounts(10, 1), stats(), FlagConfig())
    assert not d.flagged
    assert d.reason is Reason.RATE_CONDITION
    assert d.srr_observed == pytest.approx(0.1)


def test_binomial_high_rate_flags():
    d = flag_binomial(ReturnCounts(10, 9), stats(), FlagConfig())
    assert d.flagged
    assert d.score == pytest.approx(18.526042, abs=1e-6)
    assert d.threshold_used == THETA_MACHINE_EPSILON


def test_binomial_rate_ok_but_too_little_evidence():
    d = flag_binomial(ReturnCounts(10, 3), stats(), FlagConfig())
    assert not d.flagged
    assert d.reason is Reason.SCORE_CONDITION
    assert d.score == pytest.approx(2.857787, abs=1e-6)


def test_bayesian_examples():
    uniform = PriorParams.uniform()
    yes = flag_bayesian(ReturnCounts(100, 35), stats(), uniform, BASE)
    assert yes.flagged and yes.score == pytest.approx(20.5632, abs=1e-4)
    no = flag_bayesian(ReturnCounts(100, 30), stats(), uniform, BASE)
    assert not no.flagged and no.score == pytest.approx(13.1956, abs=1e-4)


@pytest.mark.parametrize("prior", [PriorParams(1, 1), PriorParams(8, 1, Provenance.HUMAN_FEEDBACK), PriorParams(1, 3)])
def test_no_data_never_flags(prior):
    d = flag_bayesian(ReturnCounts(0, 0), stats(), prior, BASE)
    assert not d.flagged and d.reason is Reason.NO_DATA and d.srr_observed is None
    assert not flag_binomial(ReturnCounts(0, 0), stats(), BASE).flagged


def test_min_orders_gate():
    cfg = FlagConfig(theta=1.0, min_orders=20)
    d = flag_binomial(ReturnCounts(10, 9), stats(), cfg)
    assert not d.flagged and d.reason is Reason.BELOW_MIN_ORDERS


def test_degenerate_category_mean_recorded():
    d = flag_binomial(ReturnCounts(10, 5), CategoryStats(0.0, 0.0, (0.0, 0.0)), BASE)
    assert not d.flagged and d.reason is Reason.DEGENERATE_PI


def test_ties_count_as_satisfied():
    # srr exactly pi + sigma, and theta exactly the score
    counts = ReturnCounts(100, 25)
    s = stats(0.2, 0.05)
    score = flag_binomial(counts, s, FlagConfig(theta=1e-9)).score
    d = flag_binomial(counts, s, FlagConfig(theta=score))
    assert d.flagged


def test_per_direction_thresholds():
    cfg = FlagConfig(theta=50.0, theta_by_direction={Direction.TOO_SMALL: 1.0})
    assert cfg.theta_for(Direction.TOO_BIG) == 50.0
    assert cfg.theta_for(Direction.TOO_SMALL) == 1.0


def test_flagged_implies_both_conditions():
    rng = random.Random(3)
    for _ in range(2000):
        n = rng.randint(0, 300)
        k = rng.randint(0, n)
        pi, sigma = rng.uniform(0.01, 0.5), rng.uniform(0.0, 0.2)
        prior = PriorParams(rng.uniform(1, 8), rng.uniform(1, 3))
        theta = rng.uniform(0.5, 20)
        d = flag_bayesian(ReturnCounts(n, k), stats(pi, sigma), prior, FlagConfig(theta=theta))
        if d.flagged:
            assert d.srr_observed >= pi + sigma and d.score >= d.threshold_used


@settings(max_examples=300, deadline=None)
@given(
    st.integers(1, 3000).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))),
    st.floats(0.01, 0.6),
    st.floats(0.0, 0.3),
    st.floats(0.5, 30.0),
)
def test_uniform_prior_matches_binomial_with_shifted_threshold(nk, pi, sigma, theta):
    n, k = nk
    counts, s = ReturnCounts(n, k), stats(pi, sigma)
    binom = flag_binomial(counts, s, FlagConfig(theta=theta, variant=Variant.V0))
    shifted = theta - math.log(n + 1)
    if shifted <= 0:
        return
    bayes = flag_bayesian(counts, s, PriorParams.uniform(), FlagConfig(theta=shifted))
    if binom.score is not None and abs(binom.score - theta) <= 1e-6:
        return
    assert binom.flagged == bayes.flagged


@settings(max_examples=300, deadline=None)
@given(
    st.integers(1, 2000).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))),
    st.floats(0.01, 0.6),
    st.floats(0.0, 0.3),
    st.floats(1, 10),
    st.floats(1, 10),
    st.floats(0.1, 30.0),
    st.floats(0.0, 10.0),
)
def test_theta_subset_property(nk, pi, sigma, a, b, t1, dt):
    n, k = nk
    counts, s, prior = ReturnCounts(n, k), stats(pi, sigma), PriorParams(a, b)
    high = flag_bayesian(counts, s, prior, FlagConfig(theta=t1 + dt))
    low = flag_bayesian(counts, s, prior, FlagConfig(theta=t1))
    assert not high.flagged or low.flagged


@settings(max_examples=300, deadline=None)
@given(
    st.integers(1, 2000).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n - 1))),
    st.floats(0.01, 0.6),
    st.floats(0.0, 0.3),
    st.floats(1, 10),
    st.floats(1, 10),
    st.floats(0.1, 30.0),
)
def test_k_monotonicity(nk, pi, sigma, a, b, theta):
    n, k = nk
    s, prior, cfg = stats(pi, sigma), PriorParams(a, b), FlagConfig(theta=theta)
    if k / n < pi + sigma or k + a < pi * (n + a + b - 1):
        return
    if flag_bayesian(ReturnCounts(n, k), s, prior, cfg).flagged:
        assert flag_bayesian(ReturnCounts(n, k + 1), s, prior, cfg).flagged


def _record(aid, n, big, small):
    return ArticleRecord(aid, "C", n, big, small)


def test_run_sizeflags_two_decisions_per_article():
    arts = [_record("b", 100, 40, 2), _record("a", 100, 5, 5), _record("c", 0, 0, 0)]
    dirs = {Direction.TOO_BIG: stats(0.1, 0.05), Direction.TOO_SMALL: stats(0.1, 0.05)}
    out = run_sizeflags(arts, dirs, None, FlagConfig(theta=15.0))
    assert [(d.article_id, d.direction.value) for d in out] == [
        ("a", "too_big"), ("a", "too_small"),
        ("b", "too_big"), ("b", "too_small"),
        ("c", "too_big"), ("c", "too_small"),
    ]
    assert flagged_articles(out) == {"b": [Direction.TOO_BIG]}


def test_run_sizeflags_no_flags_below_rate():
    arts = [_record(f"x{i}", 100, 5, 5) for i in range(20)]
    dirs = {d: stats(0.1, 0.05) for d in Direction}
    assert not any(d.flagged for d in run_sizeflags(arts, dirs, None, FlagConfig(theta=0.1)))


def test_run_sizeflags_missing_prior_falls_back_to_default():
    arts = [_record("a", 50, 20, 0), _record("b", 50, 20, 0)]
    dirs = {d: stats(0.1, 0.05) for d in Direction}
    priors = {Direction.TOO_BIG: {"a": PriorParams(8, 1, Provenance.HUMAN_FEEDBACK)}}
    out = run_sizeflags(arts, dirs, priors, FlagConfig(theta=15.0), default_concentration=2.0)
    by_key = {(d.article_id, d.direction): d for d in out}
    assert by_key[("a", Direction.TOO_BIG)].prior_used.alpha == 8
    fallback = by_key[("b", Direction.TOO_BIG)].prior_used
    assert fallback.provenance is Provenance.DEFAULT
    assert fallback.alpha == pytest.approx(1.2) and fallback.beta == pytest.approx(2.8)


def test_v0_ignores_priors():
    arts = [_record("a", 50, 20, 0)]
    dirs = {d: stats(0.1, 0.05) for d in Direction}
    out = run_sizeflags(arts, dirs, {Direction.TOO_BIG: {"a": PriorParams(8, 1)}}, FlagConfig(theta=15, variant=Variant.V0))
    assert all(d.prior_used is None for d in out)
    assert out[0].score == pytest.approx(
        flag_binomial(ReturnCounts(50, 20), dirs[Direction.TOO_BIG], BASE).score
    )


def test_direction_independence():
    dirs = {Direction.TOO_BIG: stats(0.1, 0.05), Direction.TOO_SMALL: stats(0.2, 0.02)}
    a = run_sizeflags([_record("a", 80, 30, 1)], dirs, None, BASE)
    b = run_sizeflags([_record("a", 80, 30, 40)], dirs, None, BASE)
    assert a[0] == b[0]
    assert a[1] != b[1]


def test_determinism_independent_of_input_order():
    rng = random.Random(9)
    arts = []
    for i in range(200):
        n = rng.randint(0, 200)
        big = rng.randint(0, n)
        arts.append(_record(f"a{i:03d}", n, big, rng.randint(0, n - big)))
    dirs = {d: stats(0.15, 0.08) for d in Direction}
    first = run_sizeflags(arts, dirs, None, BASE)
    rng.shuffle(arts)
    assert run_sizeflags(arts, dirs, None, BASE) == first


def test_decision_to_dict_round_trips_through_json():
    import json

    d = flag_bayesian(ReturnCounts(100, 35), stats(), PriorParams.uniform(), BASE, Direction.TOO_SMALL, "z")
    payload = json.loads(json.dumps(d.to_dict()))
    assert payload["direction"] == "too_small"
    assert payload["prior_used"] == {"alpha": 1.0, "beta": 1.0, "provenance": "default"}
    assert payload["reason"] == "flagged"


def test_variant_properties():
    assert not Variant.V0.bayesian
    assert Variant.SIZEFLAGS.uses_cues and Variant.V_SN.uses_cues
    assert not Variant.V_TH.uses_cues
    assert Variant.V_TH.optimized_threshold and Variant.SIZEFLAGS.optimized_threshold
    assert not Variant.V_BASE.optimized_threshold
