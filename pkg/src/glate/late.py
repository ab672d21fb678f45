"""Second step: LATE estimates for pairs of clubs.

Every pair of clubs yields an instrument contrast. Four estimators are
offered per pair:

* ``single``: the focal-club membership dummy as one instrument;
* ``union``: one dummy per focal judge, reference club as the base category;
* ``median``: median of the Wald estimates over all judge pairs across the
  two clubs;
* ``post-selection``: the single or union estimator restricted to the largest
  group of judges with equal reduced-form coefficients inside each club.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from glate import regress
from glate.ahc import Partition, WeightedPoint, build_merge_path
from glate.clubs import ClubAssignment, choose_k
from glate.data import CaseTable
from glate.errors import (
    EmptySelection,
    TooFewClubs,
    TooFewJudges,
    ValidationError,
    WeakDenominator,
    ZeroDenominator,
    ZeroFirstStage,
)

FS_THRESHOLD = 10.0
MODES = ("single", "union", "median", "post-selection")


@dataclass(frozen=True)
class ClubPair:
    """Two clubs; the focal club has the strictly higher mean propensity."""

    pair_id: int
    reference_club: int
    focal_club: int
    judges_ref: tuple
    judges_focal: tuple
    mean_ref: float = float("nan")
    mean_focal: float = float("nan")

    def __post_init__(self):
        if set(self.judges_ref) & set(self.judges_focal):
            raise ValidationError("club pair judge sets overlap")
        if not self.judges_ref or not self.judges_focal:
            raise ValidationError("club pair has an empty club")
        if np.isfinite(self.mean_ref) and np.isfinite(self.mean_focal) and not self.mean_focal > self.mean_ref:
            raise ValidationError("focal club must have the higher mean propensity")

    @property
    def judges(self) -> tuple:
        return tuple(sorted(self.judges_ref + self.judges_focal))


@dataclass(frozen=True)
class UnionSpec:
    pair: ClubPair

    @property
    def instruments(self) -> tuple:
        return tuple(sorted(self.pair.judges_focal))


@dataclass(frozen=True)
class ClubPairEstimate:
    """One pair-level estimate.

    ``sargan_p`` is the overidentification p-value: Hansen J under robust
    standard errors, the classical Sargan test under homoskedastic ones.
    """

    pair: ClubPair
    mode: str
    beta: float
    se: float | None
    first_stage_f: float | None
    sargan_p: float | None
    complier_share: float
    n: int
    selected_valid: tuple | None = None
    weak: bool = False
    n_skipped: int = 0

    @property
    def ci95(self) -> tuple[float, float] | None:
        if self.se is None:
            return None
        return (self.beta - 1.96 * self.se, self.beta + 1.96 * self.se)


@dataclass(frozen=True)
class GroupSelection:
    club: int
    groups: Partition
    largest_group: tuple
    f_trace: tuple
    gamma_hat: dict = field(default_factory=dict)

    @property
    def excluded(self) -> tuple:
        keep = set(self.largest_group)
        return tuple(j for m in self.groups.members for j in m if j not in keep)


@dataclass(frozen=True)
class BiasInputs:
    p_z: float
    p_zprime: float
    gamma11: float = 0.0
    gamma00: float = 0.0
    gamma10: float = 0.0


def enumerate_pairs(assignment: ClubAssignment) -> list[ClubPair]:
    """All pairs of clubs, focal = higher mean, in lexicographic club order."""
    clubs = assignment.clubs
    if clubs.k < 2:
        raise TooFewClubs(f"need at least 2 usable clubs, got {clubs.k}")
    means = clubs.cluster_means
    pairs = []
    for a, b in combinations(range(clubs.k), 2):
        hi, lo = (a, b) if means[a] > means[b] else (b, a)
        if means[hi] == means[lo]:
            raise ZeroFirstStage(f"clubs {a} and {b} have identical mean propensity")
        pairs.append(
            ClubPair(
                pair_id=len(pairs) + 1,
                reference_club=lo,
                focal_club=hi,
                judges_ref=tuple(clubs.members[lo]),
                judges_focal=tuple(clubs.members[hi]),
                mean_ref=float(means[lo]),
                mean_focal=float(means[hi]),
            )
        )
    return pairs


def _share(sub: CaseTable, focal: Sequence) -> tuple[np.ndarray, float]:
    z = sub.rows_for(focal).astype(float)
    d = sub.treatment
    on = z == 1.0
    share = float(d[on].mean() - d[~on].mean())
    if share == 0.0:
        raise ZeroFirstStage("focal and reference cases have identical treatment rates")
    return z, share


def _tsls_pair(sub, Z, share, pair, mode, se_kind, fs_threshold, selected=None) -> ClubPairEstimate:
    try:
        res = regress.tsls(sub.outcome, sub.treatment, Z, se_kind=se_kind)
    except WeakDenominator as exc:
        raise ZeroFirstStage(str(exc)) from None
    return ClubPairEstimate(
        pair=pair,
        mode=mode,
        beta=res.beta,
        se=res.se,
        first_stage_f=res.first_stage_f,
        sargan_p=res.overid_p,
        complier_share=share,
        n=res.n,
        selected_valid=selected,
        weak=bool(res.first_stage_f < fs_threshold),
    )


def estimate_pair_single(
    data: CaseTable, pair: ClubPair, *, se_kind: str = "hc1", fs_threshold: float = FS_THRESHOLD
) -> ClubPairEstimate:
    """Just-identified IV with the focal-club membership dummy."""
    sub = data.subset(pair.judges)
    z, share = _share(sub, pair.judges_focal)
    return _tsls_pair(sub, z, share, pair, "single", se_kind, fs_threshold)


def estimate_pair_union(
    data: CaseTable, union: UnionSpec | ClubPair, *, se_kind: str = "hc1", fs_threshold: float = FS_THRESHOLD
) -> ClubPairEstimate:
    """2SLS with one dummy per focal judge on the two clubs' cases."""
    spec = union if isinstance(union, UnionSpec) else UnionSpec(union)
    sub = data.subset(spec.pair.judges)
    _, share = _share(sub, spec.pair.judges_focal)
    Z = sub.dummies(spec.instruments)
    return _tsls_pair(sub, Z, share, spec.pair, "union", se_kind, fs_threshold)


def estimate_pair_median(data: CaseTable, pair: ClubPair) -> ClubPairEstimate:
    """Median of judge-pair Wald estimates between the two clubs.

    A judge pair with identical treatment rates has no Wald estimate; it is
    skipped and counted in ``n_skipped``. No standard error is reported.
    """
    sub = data.subset(pair.judges)
    y_bar = sub.judge_means(sub.outcome)
    d_bar = sub.judge_means(sub.treatment)
    estimates = []
    skipped = 0
    for a in pair.judges_ref:
        for b in pair.judges_focal:
            den = d_bar[b] - d_bar[a]
            if den == 0.0:
                skipped += 1
                continue
            estimates.append((y_bar[b] - y_bar[a]) / den)
    if not estimates:
        raise ZeroFirstStage("every judge pair has a zero first-stage difference")
    _, share = _share(sub, pair.judges_focal)
    return ClubPairEstimate(
        pair=pair,
        mode="median",
        beta=float(np.median(estimates)),
        se=None,
        first_stage_f=None,
        sargan_p=None,
        complier_share=share,
        n=sub.n,
        n_skipped=skipped,
    )


def _largest_group(groups: Partition, gamma: Mapping) -> tuple:
    def key(members):
        spread = float(np.var([gamma[j] for j in members]))
        return (-len(members), spread, members[0])

    return min(groups.members, key=key)


def select_valid_in_club(data: CaseTable, club_judges: Sequence, alpha: float, club: int = -1) -> GroupSelection:
    """Group a club's judges by reduced-form coefficient and keep the largest group.

    The reduced-form coefficients are the judge means of the outcome on the
    club's own cases. Groups come from Ward clustering of those means, with
    the number of groups chosen by the same sequential F test as the clubs.
    Ties for the largest group go to the smaller within-group variance, then
    to the smaller minimum judge id.
    """
    judges = tuple(sorted(set(club_judges)))
    if len(judges) < 2:
        raise TooFewJudges(f"club {club} has {len(judges)} judge(s); need at least 2")
    sub = data.subset(judges)
    X = sub.dummies(judges)
    fit = regress.ols(sub.outcome, X, se_kind="homoskedastic")
    # judge means equal the dummy coefficients; taken directly so exact ties stay exact
    gamma = sub.judge_means(sub.outcome)
    counts = sub.counts()
    path = build_merge_path(WeightedPoint(j, gamma[j], counts[j]) for j in judges)
    sel = choose_k(path, fit, X, judges, alpha)
    return GroupSelection(
        club=club,
        groups=sel.partition,
        largest_group=_largest_group(sel.partition, gamma),
        f_trace=sel.f_trace,
        gamma_hat=gamma,
    )


def select_valid_groups(data: CaseTable, assignment: ClubAssignment, alpha: float) -> dict[int, GroupSelection]:
    """:func:`select_valid_in_club` for every club with at least two judges."""
    return {
        c: select_valid_in_club(data, members, alpha, club=c)
        for c, members in enumerate(assignment.clubs.members)
        if len(members) >= 2
    }


def estimate_pair_post_selection(
    data: CaseTable,
    pair: ClubPair,
    selections: Mapping[int, GroupSelection],
    *,
    union: bool = True,
    se_kind: str = "hc1",
    fs_threshold: float = FS_THRESHOLD,
) -> ClubPairEstimate:
    """IV estimate comparing the largest valid groups of the two clubs.

    A club without a selection (for instance a single-judge club) enters
    whole. With ``union`` the focal group's judge dummies are the
    instruments, otherwise the focal-group membership dummy. Inference does
    not account for the selection step.
    """

    def group(club, judges):
        sel = selections.get(club)
        return tuple(judges) if sel is None else tuple(sel.largest_group)

    ref = group(pair.reference_club, pair.judges_ref)
    focal = group(pair.focal_club, pair.judges_focal)
    if not ref or not focal:
        raise EmptySelection(f"pair {pair.pair_id} has an empty selected group")
    sub = data.subset(ref + focal)
    z, share = _share(sub, focal)
    Z = sub.dummies(sorted(focal)) if union else z
    selected = tuple(sorted(ref + focal))
    return _tsls_pair(sub, Z, share, pair, "post-selection", se_kind, fs_threshold, selected)


def wald_bias(inputs: BiasInputs) -> float:
    """Asymptotic bias of the Wald ratio when the instrument has direct effects.

    ``gamma11``, ``gamma00`` and ``gamma10`` are the average direct effects
    among always-takers, never-takers and compliers of the contrast between
    ``p_z`` and ``p_zprime``.
    """
    den = inputs.p_z - inputs.p_zprime
    if den == 0.0:
        raise ZeroDenominator("p_z equals p_zprime")
    return (inputs.p_zprime * inputs.gamma11 + (1.0 - inputs.p_z) * inputs.gamma00) / den + inputs.gamma10


__all__ = [
    "BiasInputs",
    "ClubPair",
    "ClubPairEstimate",
    "FS_THRESHOLD",
    "GroupSelection",
    "MODES",
    "UnionSpec",
    "enumerate_pairs",
    "estimate_pair_median",
    "estimate_pair_post_selection",
    "estimate_pair_single",
    "estimate_pair_union",
    "select_valid_groups",
    "select_valid_in_club",
    "wald_bias",
]
