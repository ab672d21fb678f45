"""First step: judge propensity scores, Ward clustering, and the number of clubs.

The number of clusters is chosen by testing, for K = 1, 2, ..., whether all
judge coefficients inside each cluster of the K-cluster cut are equal. The
first K that is not rejected at ``alpha`` wins. The same loop selects groups
of reduced-form coefficients inside a club (see :mod:`glate.late`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from glate import regress
from glate.ahc import MergePath, Partition, WeightedPoint, build_merge_path, cut, partition_from_groups
from glate.data import CaseTable
from glate.errors import EmptyJudge, TooFewJudges, ValidationError

DEFAULT_ALPHA = 0.01
DEFAULT_MIN_CASES = 20
ALPHA_GRID = (0.001, 0.01, 0.05)


@dataclass(frozen=True)
class PropensityProfile:
    judge: str
    p_hat: float
    n_cases: int


@dataclass(frozen=True)
class KSelection:
    k: int
    partition: Partition
    f_trace: tuple[tuple[int, float, float], ...]
    no_stop: bool


@dataclass(frozen=True)
class ClubAssignment:
    """Selected clubs, indexed 0..k-1 by descending club mean."""

    k_selected: int
    clubs: Partition
    f_trace: tuple[tuple[int, float, float], ...]
    excluded_judges: dict = field(default_factory=dict)
    no_stop: bool = False
    alpha: float = DEFAULT_ALPHA
    controls_used: bool = False
    flagged: dict = field(default_factory=dict)

    @property
    def club_means(self) -> np.ndarray:
        return self.clubs.cluster_means

    def members(self, club: int) -> tuple:
        return self.clubs.members[club]


def partial_controls(data: CaseTable, controls=None) -> CaseTable:
    """Residualize outcome and treatment on an intercept plus ``controls``.

    Sample means are added back so judge-level means stay on the original
    scale. ``controls`` defaults to the table's own control matrix.
    """
    C = data.controls if controls is None else np.asarray(controls, dtype=float)
    if C is None or C.size == 0:
        raise ValidationError("no controls to partial out")
    if C.ndim == 1:
        C = C[:, None]
    design = np.column_stack([np.ones(data.n), C])
    y_res, d_res = regress.partial_out([data.outcome, data.treatment], design)
    return data.with_outcomes(y_res + data.outcome.mean(), d_res + data.treatment.mean())


def estimate_propensities(data: CaseTable, controls=None) -> list[PropensityProfile]:
    """Judge-level treatment propensities.

    Without controls these are judge means of the treatment. With controls,
    the treatment is first residualized (see :func:`partial_controls`) and the
    propensity is the judge coefficient in the regression of the residualized
    treatment on judge dummies.
    """
    if controls is not None:
        data = partial_controls(data, controls)
    counts = data.counts()
    empty = [j for j, c in counts.items() if c == 0]
    if empty:
        raise EmptyJudge(f"judges without cases: {empty}")
    means = data.judge_means(data.treatment)
    return [PropensityProfile(j, means[j], counts[j]) for j in data.judge_ids]


def restriction_matrix(partition: Partition, columns: Sequence) -> np.ndarray:
    """Rows e_first - e_other for every cluster; J - K rows in total."""
    pos = {c: i for i, c in enumerate(columns)}
    rows = []
    for members in partition.members:
        first = pos[members[0]]
        for other in members[1:]:
            row = np.zeros(len(columns))
            row[first] = 1.0
            row[pos[other]] = -1.0
            rows.append(row)
    return np.array(rows).reshape(len(rows), len(columns))


def choose_k(path: MergePath, fit: regress.FitResult, X: np.ndarray, columns: Sequence, alpha: float) -> KSelection:
    """Smallest K whose within-cluster equality restrictions are not rejected."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    n_leaves = path.n_leaves
    trace = []
    for k in range(1, n_leaves):
        part = cut(path, k)
        test = regress.f_test_restrictions(fit, X, restriction_matrix(part, columns))
        trace.append((k, test.f_stat, test.p_value))
        if not test.p_value < alpha:
            return KSelection(k, part, tuple(trace), False)
    return KSelection(n_leaves, cut(path, n_leaves), tuple(trace), True)


def order_by_mean(partition: Partition, descending: bool = True) -> Partition:
    """Re-index clusters by their mean (ties by smallest member id)."""
    sign = -1.0 if descending else 1.0
    order = sorted(range(partition.k), key=lambda c: (sign * partition.cluster_means[c], partition.members[c][0]))
    members = tuple(partition.members[c] for c in order)
    return Partition(
        k=partition.k,
        assignment={i: c for c, m in enumerate(members) for i in m},
        members=members,
        cluster_means=partition.cluster_means[order],
        cluster_sizes=partition.cluster_sizes[order],
    )


@dataclass(frozen=True)
class _Prepared:
    path: MergePath
    fit: regress.FitResult
    X: np.ndarray
    columns: tuple
    excluded: dict


def _prepare(profiles: Sequence[PropensityProfile], data: CaseTable, min_cases: int) -> _Prepared:
    if min_cases < 1:
        raise ValidationError("min_cases must be at least 1")
    excluded = {p.judge: f"n_cases={p.n_cases} < min_cases={min_cases}" for p in profiles if p.n_cases < min_cases}
    kept = [p for p in profiles if p.n_cases >= min_cases]
    if len(kept) < 2:
        raise TooFewJudges(f"{len(kept)} judge(s) left after min_cases={min_cases}")
    columns = tuple(sorted(p.judge for p in kept))
    sub = data.subset(columns)
    X = sub.dummies(columns)
    fit = regress.ols(sub.treatment, X, se_kind="homoskedastic")
    path = build_merge_path(WeightedPoint(p.judge, p.p_hat, p.n_cases) for p in kept)
    return _Prepared(path, fit, X, columns, excluded)


def _assignment(prep: _Prepared, alpha: float, controls_used: bool) -> ClubAssignment:
    sel = choose_k(prep.path, prep.fit, prep.X, prep.columns, alpha)
    return ClubAssignment(
        k_selected=sel.k,
        clubs=order_by_mean(sel.partition),
        f_trace=sel.f_trace,
        excluded_judges=dict(prep.excluded),
        no_stop=sel.no_stop,
        alpha=alpha,
        controls_used=controls_used,
    )


def select_clubs(
    profiles: Sequence[PropensityProfile],
    data: CaseTable,
    alpha: float = DEFAULT_ALPHA,
    min_cases: int = DEFAULT_MIN_CASES,
    controls_used: bool = False,
) -> ClubAssignment:
    """Cluster propensities and pick the number of clubs by iterated F tests.

    ``data`` must be the table the profiles were estimated from (already
    residualized when controls are used). If the F test still rejects at
    K = J - 1, K = J is returned with ``no_stop`` set.
    """
    return _assignment(_prepare(profiles, data, min_cases), alpha, controls_used)


def select_clubs_grid(
    profiles: Sequence[PropensityProfile],
    data: CaseTable,
    alphas: Sequence[float] = ALPHA_GRID,
    min_cases: int = DEFAULT_MIN_CASES,
    controls_used: bool = False,
) -> dict[float, ClubAssignment]:
    """:func:`select_clubs` for several significance levels sharing one merge path."""
    prep = _prepare(profiles, data, min_cases)
    return {a: _assignment(prep, a, controls_used) for a in alphas}


def drop_degenerate_clubs(assignment: ClubAssignment) -> ClubAssignment:
    """Remove singleton clubs and, without controls, clubs with means outside [0, 1].

    With controls the propensities are residualized coefficients, so an
    out-of-range mean is only flagged.
    """
    excluded = dict(assignment.excluded_judges)
    flagged = dict(assignment.flagged)
    keep = []
    for c, members in enumerate(assignment.clubs.members):
        mean = float(assignment.club_means[c])
        out_of_range = not 0.0 <= mean <= 1.0
        if len(members) == 1:
            reason = "singleton club" + (f" with mean {mean:.6g} outside [0, 1]" if out_of_range else "")
            excluded.update({j: reason for j in members})
            continue
        if out_of_range:
            if assignment.controls_used:
                flagged[members[0]] = f"club mean {mean:.6g} outside [0, 1]"
            else:
                excluded.update({j: f"club mean {mean:.6g} outside [0, 1]" for j in members})
                continue
        keep.append(c)
    if len(keep) == assignment.clubs.k:
        return replace(assignment, flagged=flagged)
    clubs = assignment.clubs
    members = tuple(clubs.members[c] for c in keep)
    new = Partition(
        k=len(keep),
        assignment={i: n for n, m in enumerate(members) for i in m},
        members=members,
        cluster_means=clubs.cluster_means[keep],
        cluster_sizes=clubs.cluster_sizes[keep],
    )
    return replace(assignment, k_selected=len(keep), clubs=new, excluded_judges=excluded, flagged=flagged)


__all__ = [
    "ALPHA_GRID",
    "ClubAssignment",
    "KSelection",
    "PropensityProfile",
    "choose_k",
    "drop_degenerate_clubs",
    "estimate_propensities",
    "order_by_mean",
    "partial_controls",
    "partition_from_groups",
    "restriction_matrix",
    "select_clubs",
    "select_clubs_grid",
]
