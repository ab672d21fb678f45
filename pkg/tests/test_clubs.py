import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_cases
from glate import regress
from glate.ahc import partition_from_groups
from glate.clubs import (
    ClubAssignment,
    drop_degenerate_clubs,
    estimate_propensities,
    order_by_mean,
    partial_controls,
    restriction_matrix,
    select_clubs,
    select_clubs_grid,
)
from glate.data import CaseTable
from glate.errors import TooFewJudges, ValidationError
from glate.simulate import draw, scenario_preset


def test_propensity_is_judge_mean():
    t = CaseTable.from_labels(["a"] * 4 + ["b"] * 2, np.zeros(6), [1, 1, 0, 0, 1, 0])
    prof = {p.judge: p for p in estimate_propensities(t)}
    assert prof["a"].p_hat == 0.5 and prof["a"].n_cases == 4
    assert prof["b"].p_hat == 0.5


def test_identical_patterns_give_equal_propensities():
    t = CaseTable.from_labels(["a", "a", "b", "b", "c", "c"], np.arange(6.0), [1, 0] * 3)
    assert len({p.p_hat for p in estimate_propensities(t)}) == 1


def test_large_draw_propensities_near_club_values():
    sc = scenario_preset("no-invalid", "large")
    data = draw(sc, 3).to_cases()
    props = sc.judge_props
    for p, truth in zip(estimate_propensities(data), props):
        se = np.sqrt(truth * (1 - truth) / p.n_cases)
        assert abs(p.p_hat - truth) <= 3 * max(se, 1e-12) + 1.0 / p.n_cases


def test_restriction_matrix_rows():
    part = partition_from_groups([("a", "c"), ("b",), ("d", "e", "f")], dict.fromkeys("abcdef", 0.0), dict.fromkeys("abcdef", 1.0))
    R = restriction_matrix(part, "abcdef")
    assert R.shape == (3, 6)
    np.testing.assert_array_equal(R.sum(axis=1), 0)


def test_f_trace_matches_direct_test():
    data = make_cases([0.9] * 4 + [0.2] * 4, 300, seed=1)
    a = select_clubs(estimate_propensities(data), data, alpha=0.05, min_cases=1)
    assert a.k_selected == 2
    assert {frozenset(m) for m in a.clubs.members} == {frozenset(data.judge_ids[:4]), frozenset(data.judge_ids[4:])}
    assert a.club_means[0] > a.club_means[1]
    assert [k for k, _, _ in a.f_trace] == [1, 2]
    assert a.f_trace[0][2] < 0.05 <= a.f_trace[-1][2]
    # K=2 statistic by hand: SSR form against the two-club model
    X = data.dummies()
    full = regress.ols(data.treatment, X, se_kind="homoskedastic")
    club = np.column_stack([X[:, :4].sum(axis=1), X[:, 4:].sum(axis=1)])
    ssr_r = regress.ols(data.treatment, club).ssr
    f_ref = ((ssr_r - full.ssr) / 6) / (full.ssr / (data.n - 8))
    assert a.f_trace[1][1] == pytest.approx(f_ref, rel=1e-8)


def test_single_true_club_usually_selects_one():
    hits = sum(
        select_clubs(estimate_propensities(d), d, alpha=0.05, min_cases=1).k_selected == 1
        for d in (make_cases([0.4] * 6, 400, seed=s) for s in range(60))
    )
    assert hits / 60 >= 0.85


def test_min_cases_exclusion_and_too_few():
    data = make_cases([0.9, 0.9, 0.1, 0.1], [50, 5, 50, 50], seed=2)
    a = select_clubs(estimate_propensities(data), data, alpha=0.01, min_cases=20)
    assert set(a.excluded_judges) == {"J2"}
    assert "J2" not in a.clubs.assignment
    with pytest.raises(TooFewJudges):
        select_clubs(estimate_propensities(data), data, min_cases=60)
    with pytest.raises(ValidationError):
        select_clubs(estimate_propensities(data), data, alpha=1.5)


def test_no_stop_returns_all_singletons():
    data = make_cases([0.1, 0.5, 0.9], 2000, seed=3)
    a = select_clubs(estimate_propensities(data), data, alpha=0.5, min_cases=1)
    assert a.k_selected == 3 and a.no_stop
    assert len(a.f_trace) == 2


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_k_nondecreasing_in_alpha(seed):
    data = make_cases([0.9] * 3 + [0.6] * 3 + [0.55] * 3 + [0.1] * 2, 60, seed=seed)
    grid = select_clubs_grid(estimate_propensities(data), data, (0.001, 0.01, 0.05, 0.2), min_cases=1)
    ks = [grid[a].k_selected for a in sorted(grid)]
    assert ks == sorted(ks)


def test_club_means_are_weighted_propensity_means():
    data = make_cases([0.9] * 3 + [0.2] * 3, [80, 120, 200, 90, 60, 150], seed=4)
    profiles = estimate_propensities(data)
    a = select_clubs(profiles, data, alpha=0.01, min_cases=1)
    p = {q.judge: q for q in profiles}
    for c, members in enumerate(a.clubs.members):
        w = sum(p[j].n_cases for j in members)
        assert a.club_means[c] == pytest.approx(sum(p[j].p_hat * p[j].n_cases for j in members) / w, rel=1e-12)
        # equals the treatment mean over the club's cases
        assert a.club_means[c] == pytest.approx(data.treatment[data.rows_for(members)].mean(), rel=1e-12)


def test_consistency_improves_with_case_scale():
    rates = []
    for scale in (20, 80):
        ok = 0
        for s in range(200):
            data = make_cases([0.8] * 4 + [0.5] * 4 + [0.2] * 4, scale, seed=1000 + s)
            a = select_clubs(estimate_propensities(data), data, alpha=0.05, min_cases=1)
            ok += a.clubs.as_sets() == {frozenset(data.judge_ids[i:i + 4]) for i in (0, 4, 8)}
        rates.append(ok / 200)
    assert rates[0] <= rates[1]


def _assignment(groups, means, controls_used=False):
    values = {j: m for g, m in zip(groups, means) for j in g}
    part = order_by_mean(partition_from_groups(groups, values, dict.fromkeys(values, 1.0)))
    return ClubAssignment(part.k, part, (), controls_used=controls_used)


def test_drop_singleton_with_negative_mean():
    sizes = (1, 17, 20, 98, 104)
    groups, start = [], 0
    for s in sizes:
        groups.append(tuple(f"j{i:03d}" for i in range(start, start + s)))
        start += s
    a = drop_degenerate_clubs(_assignment(groups, [-0.2, 0.9, 0.6, 0.3, 0.1]))
    assert a.k_selected == 4
    assert set(a.excluded_judges) == {"j000"}
    assert sorted(len(m) for m in a.clubs.members) == [17, 20, 98, 104]


def test_drop_is_noop_and_handles_all_singletons():
    a = _assignment([("a", "b"), ("c", "d")], [0.8, 0.2])
    assert drop_degenerate_clubs(a).clubs == a.clubs
    b = drop_degenerate_clubs(_assignment([("a",), ("b",), ("c",)], [0.9, 0.5, 0.1]))
    assert b.k_selected == 0 and set(b.excluded_judges) == {"a", "b", "c"}


def test_out_of_range_flagged_only_with_controls():
    groups = [("a", "b"), ("c", "d")]
    assert drop_degenerate_clubs(_assignment(groups, [1.2, 0.3])).k_selected == 1
    kept = drop_degenerate_clubs(_assignment(groups, [1.2, 0.3], controls_used=True))
    assert kept.k_selected == 2 and kept.flagged


def test_partial_controls_propensities_are_dummy_coefficients():
    rng = np.random.default_rng(5)
    base = make_cases([0.8, 0.8, 0.3, 0.3], 150, seed=5)
    x = rng.normal(size=base.n) + 0.3 * base.judge_idx
    t = CaseTable(base.outcome, base.treatment, base.judge_idx, base.judge_ids, controls=x[:, None], control_names=("x",))
    work = partial_controls(t)
    fit = regress.ols(work.treatment, work.dummies())
    np.testing.assert_allclose([p.p_hat for p in estimate_propensities(t, t.controls)], fit.coefficients, atol=1e-12)
    assert work.treatment.mean() == pytest.approx(t.treatment.mean())
