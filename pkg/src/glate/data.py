"""Case-level data container."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from glate.errors import DimensionMismatch, EmptyJudge, NonBinaryTreatment, ValidationError


@dataclass(frozen=True)
class CaseTable:
    """Outcome, binary treatment and judge assignment for each case.

    Judges are stored as integer codes into ``judge_ids`` (sorted labels).
    ``controls`` is an (n, p) matrix with categorical columns already
    expanded to dummies.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    judge_idx: np.ndarray
    judge_ids: tuple
    controls: np.ndarray | None = None
    control_names: tuple = ()
    case_id: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.outcome.shape[0]
        if self.treatment.shape[0] != n or self.judge_idx.shape[0] != n:
            raise DimensionMismatch("outcome, treatment and judge columns differ in length")
        if self.controls is not None and self.controls.shape[0] != n:
            raise DimensionMismatch("controls rows differ from case count")
        if not np.all(np.isfinite(self.outcome)):
            raise ValidationError("outcome has missing or non-finite values")
        if not np.all((self.treatment == 0) | (self.treatment == 1)):
            raise NonBinaryTreatment("treatment must be coded 0/1")

    @classmethod
    def from_labels(
        cls,
        judges: Sequence,
        outcome,
        treatment,
        controls=None,
        control_names: Iterable[str] = (),
        case_id=None,
    ) -> "CaseTable":
        labels = np.asarray(judges).astype(str)
        ids, idx = np.unique(labels, return_inverse=True)
        treatment = np.asarray(treatment, dtype=float)
        if controls is not None:
            controls = np.asarray(controls, dtype=float)
            if controls.ndim == 1:
                controls = controls[:, None]
        return cls(
            outcome=np.asarray(outcome, dtype=float),
            treatment=treatment,
            judge_idx=idx.astype(np.int64),
            judge_ids=tuple(str(i) for i in ids),
            controls=controls,
            control_names=tuple(control_names),
            case_id=None if case_id is None else np.asarray(case_id).astype(str),
        )

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_judges(self) -> int:
        return len(self.judge_ids)

    @property
    def judge_labels(self) -> np.ndarray:
        return np.asarray(self.judge_ids, dtype=object)[self.judge_idx]

    def counts(self) -> dict:
        c = np.bincount(self.judge_idx, minlength=self.n_judges)
        return {j: int(c[i]) for i, j in enumerate(self.judge_ids)}

    def judge_means(self, values: np.ndarray | None = None) -> dict:
        values = self.treatment if values is None else values
        c = np.bincount(self.judge_idx, minlength=self.n_judges)
        s = np.bincount(self.judge_idx, weights=values, minlength=self.n_judges)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = s / c
        return {j: float(m[i]) for i, j in enumerate(self.judge_ids)}

    def rows_for(self, judges: Iterable) -> np.ndarray:
        code = {j: i for i, j in enumerate(self.judge_ids)}
        wanted = np.zeros(self.n_judges, dtype=bool)
        for j in judges:
            if j not in code:
                raise ValidationError(f"unknown judge {j!r}")
            wanted[code[j]] = True
        return wanted[self.judge_idx]

    def subset(self, judges: Iterable) -> "CaseTable":
        """Cases heard by ``judges``; judge codes are re-indexed."""
        judges = sorted(set(judges))
        mask = self.rows_for(judges)
        code = {j: i for i, j in enumerate(self.judge_ids)}
        remap = np.full(self.n_judges, -1, dtype=np.int64)
        for new, j in enumerate(judges):
            remap[code[j]] = new
        sub_idx = remap[self.judge_idx[mask]]
        if np.any(np.bincount(sub_idx, minlength=len(judges)) == 0):
            empty = [j for j, c in zip(judges, np.bincount(sub_idx, minlength=len(judges))) if c == 0]
            raise EmptyJudge(f"judges without cases: {empty}")
        return _unchecked(
            outcome=self.outcome[mask],
            treatment=self.treatment[mask],
            judge_idx=sub_idx,
            judge_ids=tuple(judges),
            controls=None if self.controls is None else self.controls[mask],
            control_names=self.control_names,
            case_id=None if self.case_id is None else self.case_id[mask],
        )

    def dummies(self, judges: Sequence | None = None) -> np.ndarray:
        """Indicator columns for ``judges`` (default: all, in id order)."""
        judges = self.judge_ids if judges is None else judges
        code = {j: i for i, j in enumerate(self.judge_ids)}
        cols = np.array([code[j] for j in judges], dtype=np.int64)
        return (self.judge_idx[:, None] == cols[None, :]).astype(float)

    def with_outcomes(self, outcome: np.ndarray, treatment: np.ndarray) -> "CaseTable":
        """Copy with replaced outcome/treatment (e.g. after partialling out controls)."""
        return _unchecked(
            outcome=np.asarray(outcome, dtype=float),
            treatment=np.asarray(treatment, dtype=float),
            judge_idx=self.judge_idx,
            judge_ids=self.judge_ids,
            controls=self.controls,
            control_names=self.control_names,
            case_id=self.case_id,
        )


def _unchecked(**fields) -> CaseTable:
    # residualized treatments are no longer binary, so skip __post_init__
    obj = object.__new__(CaseTable)
    for name, value in fields.items():
        object.__setattr__(obj, name, value)
    return obj
