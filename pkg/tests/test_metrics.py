import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedfair.metrics import (
    AGG_MAX_ABS,
    AGG_MEAN_ABS,
    aggregate_abs,
    demp_loss,
    di_loss,
    di_ratio_pairs,
    eo_loss,
    fairness_report,
    group_stats,
)


# --- independent brute-force oracle (pure python, two explicit passes) -----

def oracle_mean(values):
    if not values:
        return None
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def oracle_stats(p, a, y, n_groups):
    rows = list(zip(p, a, y))
    overall = oracle_mean([pi for pi, _, _ in rows])
    by_group = {
        g: oracle_mean([pi for pi, ai, _ in rows if ai == g]) for g in range(n_groups)
    }
    by_label = {
        lbl: oracle_mean([pi for pi, _, yi in rows if yi == lbl]) for lbl in (0, 1)
    }
    by_cell = {
        (g, lbl): oracle_mean([pi for pi, ai, yi in rows if ai == g and yi == lbl])
        for g in range(n_groups)
        for lbl in (0, 1)
    }
    pos_rate = {
        g: oracle_mean([1.0 if pi > 0.5 else 0.0 for pi, ai, _ in rows if ai == g])
        for g in range(n_groups)
    }
    return overall, by_group, by_label, by_cell, pos_rate


def oracle_losses(p, a, y, n_groups):
    overall, by_group, by_label, by_cell, _ = oracle_stats(p, a, y, n_groups)
    demp = {g: by_group[g] - overall for g in by_group if by_group[g] is not None}
    eo = {
        (g, lbl): by_cell[(g, lbl)] - by_label[lbl]
        for (g, lbl) in by_cell
        if by_cell[(g, lbl)] is not None and by_label[lbl] is not None
    }
    return demp, eo


def assert_stats_match_oracle(p, a, y, n_groups, tol=1e-12):
    stats = group_stats(p, a, y, n_groups=n_groups)
    overall, by_group, by_label, by_cell, pos_rate = oracle_stats(p, a, y, n_groups)
    assert abs(stats.overall_mean - overall) <= tol
    for g in range(n_groups):
        if by_group[g] is None:
            assert not stats.group_mask[g]
        else:
            assert abs(stats.mean_p[g] - by_group[g]) <= tol
            assert abs(stats.pos_rate[g] - pos_rate[g]) <= tol
        for lbl in (0, 1):
            if by_cell[(g, lbl)] is None:
                assert not stats.cell_mask[g, lbl]
            else:
                assert abs(stats.cell_mean[g, lbl] - by_cell[(g, lbl)]) <= tol

    demp_o, eo_o = oracle_losses(p, a, y, n_groups)
    demp_v = demp_loss(stats)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        eo_v = eo_loss(stats)
    for g, val in demp_o.items():
        assert abs(demp_v[g] - val) <= tol
    for (g, lbl), val in eo_o.items():
        assert abs(eo_v[g, lbl] - val) <= tol


# --- stats ------------------------------------------------------------------

def test_group_stats_hand_example():
    stats = group_stats([1.0, 1.0, 0.0, 0.0], [0, 0, 1, 1], [1, 1, 0, 0])
    assert stats.mean_p[0] == 1.0
    assert stats.mean_p[1] == 0.0
    assert stats.overall_mean == 0.5


def test_group_stats_single_group():
    stats = group_stats([0.2, 0.8], [0, 0], [0, 1], n_groups=1)
    assert stats.mean_p[0] == stats.overall_mean


def test_group_stats_permutation_invariant():
    rng = np.random.default_rng(0)
    p = rng.random(20)
    a = rng.integers(0, 2, size=20)
    y = rng.integers(0, 2, size=20)
    perm = rng.permutation(20)
    s1 = group_stats(p, a, y)
    s2 = group_stats(p[perm], a[perm], y[perm])
    np.testing.assert_allclose(s1.mean_p, s2.mean_p, atol=1e-15)
    np.testing.assert_allclose(s1.cell_mean, s2.cell_mean, atol=1e-15)


def test_group_stats_empty_input():
    with pytest.raises(ValueError):
        group_stats([], [], [])


# --- demographic parity -------------------------------------------------------

def test_demp_constant_predictor_zero():
    stats = group_stats([0.5] * 6, [0, 0, 1, 1, 0, 1], [0, 1, 0, 1, 0, 1])
    np.testing.assert_array_equal(demp_loss(stats), [0.0, 0.0])


def test_demp_hand_example():
    stats = group_stats([1.0, 1.0, 0.0, 0.0], [0, 0, 1, 1], [1, 1, 0, 0])
    np.testing.assert_allclose(demp_loss(stats), [0.5, -0.5])


def test_demp_single_group_zero():
    stats = group_stats([0.3, 0.9], [0, 0], [0, 1], n_groups=1)
    np.testing.assert_allclose(demp_loss(stats), [0.0], atol=1e-15)


def test_demp_weighted_zero_sum():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = rng.integers(2, 32)
        p = rng.random(n)
        a = rng.integers(0, 3, size=n)
        y = rng.integers(0, 2, size=n)
        stats = group_stats(p, a, y, n_groups=3)
        losses = demp_loss(stats)
        total = sum(
            stats.counts[g] * losses[g] for g in range(3) if stats.group_mask[g]
        )
        assert abs(total) <= 1e-12 * n
    # the identity is exact in exact arithmetic
    p = [Fraction(1, 3), Fraction(2, 3), Fraction(1, 7)]
    a = [0, 1, 0]
    overall = sum(p) / 3
    m0 = (p[0] + p[2]) / 2
    m1 = p[1]
    assert 2 * (m0 - overall) + 1 * (m1 - overall) == 0


# --- equalized odds ---------------------------------------------------------

def test_eo_constant_predictor_zero():
    stats = group_stats([0.5] * 8, [0, 1] * 4, [0, 0, 1, 1] * 2)
    np.testing.assert_array_equal(eo_loss(stats), np.zeros((2, 2)))


def test_eo_hand_example():
    stats = group_stats([1.0, 0.0], [0, 1], [1, 1])
    with pytest.warns(UserWarning):  # label-0 side is empty
        eo = eo_loss(stats)
    assert eo[0, 1] == 0.5
    assert eo[1, 1] == -0.5
    # label-0 cells are empty and flagged
    assert not stats.cell_mask[0, 0] and not stats.cell_mask[1, 0]


def test_eo_predictor_equal_to_label_zero():
    y = np.array([0, 1, 0, 1, 1, 0])
    a = np.array([0, 0, 1, 1, 0, 1])
    stats = group_stats(y.astype(float), a, y)
    eo = eo_loss(stats)
    np.testing.assert_array_equal(eo[np.isfinite(eo)], 0.0)


def test_eo_warns_when_label_absent():
    stats = group_stats([0.4, 0.6], [0, 1], [1, 1])
    with pytest.warns(UserWarning, match="label 0"):
        eo_loss(stats)


def test_eo_cell_consistency_zero_sum():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(2, 32))
        p = rng.random(n)
        a = rng.integers(0, 2, size=n)
        y = rng.integers(0, 2, size=n)
        stats = group_stats(p, a, y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            eo = eo_loss(stats)
        for lbl in (0, 1):
            cells = [
                stats.cell_counts[g, lbl] * eo[g, lbl]
                for g in range(stats.n_groups)
                if stats.cell_mask[g, lbl]
            ]
            if cells:
                assert abs(sum(cells)) <= 1e-12 * n


# --- disparate impact -------------------------------------------------------

def test_di_equal_rates_zero():
    stats = group_stats([0.6, 0.6, 0.6, 0.6], [0, 0, 1, 1], [1, 0, 1, 0])
    l_di, penalty = di_loss(stats)
    assert l_di == pytest.approx(0.0, abs=2e-6)  # eps guard shifts by ~eps
    assert penalty == pytest.approx(0.0, abs=2e-6)


def test_di_hand_example():
    stats = group_stats([0.8, 0.8, 0.4, 0.4], [0, 0, 1, 1], [1, 0, 1, 0])
    l_di, penalty = di_loss(stats, eps_div=0.0)
    assert l_di == pytest.approx(-0.5)
    assert penalty == pytest.approx(0.5)


def test_di_zero_rate_guarded():
    stats = group_stats([0.9, 0.0], [0, 1], [1, 0])
    l_di, penalty = di_loss(stats, eps_div=1e-6, soft=True)
    assert math.isfinite(l_di) and math.isfinite(penalty)


def test_di_needs_all_groups():
    stats = group_stats([0.5, 0.5], [0, 0], [0, 1], n_groups=2)
    with pytest.raises(ValueError, match="no samples"):
        di_loss(stats)


def test_di_pairs_binary():
    assert di_ratio_pairs(2) == [(1, 0), (0, 1)]
    assert di_ratio_pairs(3) == [(1, 0), (2, 1), (0, 2)]


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_di_loss_never_positive(data):
    n = data.draw(st.integers(min_value=2, max_value=24))
    p = data.draw(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=n, max_size=n))
    a = data.draw(st.lists(st.integers(min_value=0, max_value=1), min_size=n, max_size=n))
    if len(set(a)) < 2:
        return
    stats = group_stats(np.array(p), np.array(a), np.zeros(n, dtype=int), n_groups=2)
    l_di, penalty = di_loss(stats)
    assert l_di <= 0.0
    assert penalty == -l_di


# --- aggregation ------------------------------------------------------------

def test_aggregate_abs_modes():
    losses = np.array([0.2, -0.5, np.nan])
    assert aggregate_abs(losses, AGG_MAX_ABS) == 0.5
    assert aggregate_abs(losses, AGG_MEAN_ABS) == pytest.approx(0.35)
    assert aggregate_abs(np.array([np.nan]), AGG_MAX_ABS) == 0.0


def test_fairness_losses_bundle():
    from fedfair.metrics import fairness_losses

    stats = group_stats([0.9, 0.9, 0.3, 0.3], [0, 0, 1, 1], [1, 0, 1, 0])
    bundle = fairness_losses(stats)
    np.testing.assert_allclose(bundle.demp, [0.3, -0.3])
    assert bundle.di <= 0.0
    assert bundle.aggregation == AGG_MAX_ABS
    assert bundle.eo.shape == (2, 2)
    # a group missing from the batch makes the ratio loss undefined
    single = group_stats([0.5, 0.5], [0, 0], [0, 1], n_groups=2)
    assert np.isnan(fairness_losses(single).di)


# --- hard reports -----------------------------------------------------------

def test_report_balanced_decisions_zero():
    p = np.array([0.9, 0.1, 0.9, 0.1])
    a = np.array([0, 0, 1, 1])
    y = np.array([1, 0, 1, 0])
    rep = fairness_report(p, a, y)
    assert rep.demp_error == 0.0
    assert rep.eo_error == 0.0
    assert rep.di_error == pytest.approx(0.0, abs=1e-5)
    assert rep.accuracy == 1.0


def test_report_hand_example():
    rep = fairness_report(
        np.array([0.9, 0.9, 0.1, 0.1]), np.array([0, 0, 1, 1]), np.array([1, 1, 1, 1])
    )
    assert rep.demp_error == 0.5


def oracle_report(p, a, y, n_groups):
    dec = [1.0 if pi > 0.5 else 0.0 for pi in p]
    demp_o, eo_o = oracle_losses(dec, a, y, n_groups)
    demp_err = max(abs(v) for v in demp_o.values())
    eo_err = max((abs(v) for v in eo_o.values()), default=0.0)
    return demp_err, eo_err


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_report_matches_bruteforce_oracle(data):
    n = data.draw(st.integers(min_value=1, max_value=32))
    p = data.draw(
        st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=n, max_size=n)
    )
    a = data.draw(st.lists(st.integers(min_value=0, max_value=1), min_size=n, max_size=n))
    y = data.draw(st.lists(st.integers(min_value=0, max_value=1), min_size=n, max_size=n))
    rep = fairness_report(np.array(p), np.array(a), np.array(y), n_groups=2)
    demp_err, eo_err = oracle_report(p, a, y, 2)
    assert abs(rep.demp_error - demp_err) <= 1e-12
    assert abs(rep.eo_error - eo_err) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_stats_match_bruteforce_oracle(data):
    n = data.draw(st.integers(min_value=1, max_value=32))
    p = data.draw(
        st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=n, max_size=n)
    )
    a = data.draw(st.lists(st.integers(min_value=0, max_value=2), min_size=n, max_size=n))
    y = data.draw(st.lists(st.integers(min_value=0, max_value=1), min_size=n, max_size=n))
    assert_stats_match_oracle(np.array(p), np.array(a), np.array(y), n_groups=3)
