"""End-to-end estimation on a case table: clubs, pairs, selection, estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

from glate.clubs import (
    DEFAULT_ALPHA,
    DEFAULT_MIN_CASES,
    ClubAssignment,
    PropensityProfile,
    drop_degenerate_clubs,
    estimate_propensities,
    partial_controls,
    select_clubs,
)
from glate.data import CaseTable
from glate.errors import GlateError, TooFewClubs
from glate.late import (
    FS_THRESHOLD,
    ClubPairEstimate,
    GroupSelection,
    enumerate_pairs,
    estimate_pair_median,
    estimate_pair_post_selection,
    estimate_pair_single,
    estimate_pair_union,
    select_valid_groups,
)


@dataclass(frozen=True)
class EstimateSettings:
    alpha: float = DEFAULT_ALPHA
    min_cases: int = DEFAULT_MIN_CASES
    fs_threshold: float = FS_THRESHOLD
    se_kind: str = "hc1"
    use_controls: bool = True


@dataclass
class EstimateResult:
    profiles: list[PropensityProfile]
    raw_assignment: ClubAssignment
    assignment: ClubAssignment
    selections: dict[int, GroupSelection] = field(default_factory=dict)
    estimates: list[ClubPairEstimate] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def estimate_all(data: CaseTable, settings: EstimateSettings = EstimateSettings()) -> EstimateResult:
    """Run both steps on ``data``.

    With controls, outcome and treatment are residualized once on the full
    sample and every later step works on the residualized table. Pair-level
    failures (for instance a zero first stage) become notes, not errors.
    """
    controls_used = settings.use_controls and data.controls is not None and data.controls.shape[1] > 0
    work = partial_controls(data) if controls_used else data
    profiles = estimate_propensities(work)
    raw = select_clubs(profiles, work, settings.alpha, settings.min_cases, controls_used=controls_used)
    assignment = drop_degenerate_clubs(raw)
    result = EstimateResult(profiles, raw, assignment)
    if raw.no_stop:
        result.notes.append("F test rejected at every K < J; each judge is its own club")
    try:
        pairs = enumerate_pairs(assignment)
    except TooFewClubs as exc:
        result.notes.append(f"no club pairs: {exc}")
        return result
    result.selections = select_valid_groups(work, assignment, settings.alpha)
    kw = {"se_kind": settings.se_kind, "fs_threshold": settings.fs_threshold}
    runners = (
        lambda p: estimate_pair_single(work, p, **kw),
        lambda p: estimate_pair_union(work, p, **kw),
        lambda p: estimate_pair_median(work, p),
        lambda p: estimate_pair_post_selection(work, p, result.selections, **kw),
    )
    for pair in pairs:
        for run in runners:
            try:
                result.estimates.append(run(pair))
            except GlateError as exc:
                result.notes.append(f"pair {pair.pair_id}: {type(exc).__name__}: {exc}")
    return result
