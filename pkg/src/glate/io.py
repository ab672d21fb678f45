"""Loading case files, run configuration, CSV output and pre-estimation checks."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from glate import regress
from glate.data import CaseTable
from glate.errors import (
    EmptyFile,
    MissingColumn,
    NonBinaryTreatment,
    SingletonJudge,
    TooFewJudges,
    ValidationError,
)

FLOAT_FMT = ".12g"


@dataclass(frozen=True)
class RunConfig:
    alpha: float = 0.01
    min_cases: int = 20
    first_stage_threshold: float = 10.0
    se_kind: str = "robust"
    controls: tuple = ()
    out_dir: str = "."
    seed: int = 0
    outcome: str = "outcome"
    treatment: str = "treatment"
    judge: str = "judge_id"
    case_id: str | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.min_cases < 1:
            raise ValidationError("min_cases must be at least 1")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.se_kind not in regress.SE_KINDS:
            raise ValidationError(f"unknown se kind {self.se_kind!r}")

    def updated(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if name == "controls":
        return tuple(c.strip() for c in raw.split(",") if c.strip())
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def read_config(path) -> dict:
    """Parse a ``key=value`` file; ``#`` starts a comment. Keys are RunConfig fields."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def load_cases(
    path,
    outcome: str = "outcome",
    treatment: str = "treatment",
    judge: str = "judge_id",
    controls: Sequence[str] = (),
    case_id: str | None = None,
) -> CaseTable:
    """Read a UTF-8 CSV with a header row into a :class:`CaseTable`.

    Non-numeric controls are one-hot encoded with the first (sorted) level
    dropped. Missing values in any used column are rejected.
    """
    try:
        frame = pd.read_csv(path, dtype={judge: str}, encoding="utf-8", keep_default_na=True)
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"{path} is empty") from None
    if frame.empty:
        raise EmptyFile(f"{path} has a header but no rows")
    wanted = [outcome, treatment, judge, *controls] + ([case_id] if case_id else [])
    missing = [c for c in wanted if c not in frame.columns]
    if missing:
        raise MissingColumn(f"missing column(s): {', '.join(missing)}")
    used = frame[wanted]
    if used.isna().any().any():
        bad = [c for c in wanted if used[c].isna().any()]
        raise ValidationError(f"missing values in column(s): {', '.join(bad)}")

    y = pd.to_numeric(frame[outcome], errors="coerce")
    if y.isna().any():
        raise ValidationError(f"outcome column {outcome!r} is not numeric")
    d = pd.to_numeric(frame[treatment], errors="coerce")
    if d.isna().any() or not d.isin([0, 1]).all():
        raise NonBinaryTreatment(f"treatment column {treatment!r} must contain only 0 and 1")

    blocks, names = [], []
    for col in controls:
        series = frame[col]
        if pd.api.types.is_numeric_dtype(series) and not pd.api.types.is_bool_dtype(series):
            blocks.append(series.to_numpy(dtype=float)[:, None])
            names.append(col)
        else:
            levels = sorted(series.astype(str).unique())
            codes = series.astype(str).to_numpy()
            for level in levels[1:]:
                blocks.append((codes == level).astype(float)[:, None])
                names.append(f"{col}={level}")
    X = np.hstack(blocks) if blocks else None

    table = CaseTable.from_labels(
        frame[judge].astype(str).to_numpy(),
        y.to_numpy(dtype=float),
        d.to_numpy(dtype=float),
        controls=X,
        control_names=names,
        case_id=None if case_id is None else frame[case_id].astype(str).to_numpy(),
    )
    if table.n_judges < 2:
        raise TooFewJudges(f"need at least 2 distinct judges, found {table.n_judges}")
    return table


def write_cases(path, data: CaseTable) -> None:
    """Write a table in the layout :func:`load_cases` reads by default (17 digits)."""
    header = ["case_id", "judge_id", "outcome", "treatment", *data.control_names]
    labels = data.judge_labels
    case_id = data.case_id if data.case_id is not None else np.arange(1, data.n + 1).astype(str)
    rows = []
    for i in range(data.n):
        row = [case_id[i], labels[i], format(float(data.outcome[i]), ".17g"), format(float(data.treatment[i]), "g")]
        if data.controls is not None:
            row += [format(float(v), ".17g") for v in data.controls[i]]
        rows.append(row)
    write_csv(path, header, rows)


def stringency_instrument(data: CaseTable) -> np.ndarray:
    """Leave-one-out mean treatment of each case's judge."""
    counts = np.bincount(data.judge_idx, minlength=data.n_judges)
    if np.any(counts < 2):
        lone = [j for j, c in zip(data.judge_ids, counts) if c < 2]
        raise SingletonJudge(f"judges with fewer than 2 cases: {lone}")
    sums = np.bincount(data.judge_idx, weights=data.treatment, minlength=data.n_judges)
    n_j = counts[data.judge_idx]
    return (sums[data.judge_idx] - data.treatment) / (n_j - 1)


def balance_check(data: CaseTable, controls=None) -> regress.RestrictionTest:
    """Joint F test that controls do not predict the stringency instrument."""
    C = data.controls if controls is None else np.asarray(controls, dtype=float)
    if C is None or C.size == 0:
        raise ValidationError("balance check needs at least one control")
    if C.ndim == 1:
        C = C[:, None]
    s = stringency_instrument(data)
    X = np.column_stack([np.ones(data.n), C])
    fit = regress.ols(s, X, se_kind="homoskedastic")
    R = np.hstack([np.zeros((C.shape[1], 1)), np.eye(C.shape[1])])
    return regress.f_test_restrictions(fit, X, R)


def fmt(value) -> str:
    """Cell text: floats to 12 significant digits, None/NaN as empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return format(float(value), FLOAT_FMT)
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write atomically: a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(v) for v in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_records(path, records: Sequence[Mapping], header: Sequence[str] | None = None) -> Path:
    header = list(header if header is not None else (records[0].keys() if records else []))
    return write_csv(path, header, ([r.get(h) for h in header] for r in records))


__all__ = [
    "RunConfig",
    "balance_check",
    "fmt",
    "load_cases",
    "read_config",
    "stringency_instrument",
    "write_cases",
    "write_csv",
    "write_records",
]
