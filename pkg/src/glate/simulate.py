"""Simulated judge-assignment data and the Monte Carlo harness.

Each replication draws case counts per judge, a first-stage error ``V`` and
an outcome shock ``W``. Treatment follows a threshold-crossing rule
``D = 1(p_j > V)`` and the outcome is

    Y = (0.5 D + D U + gamma_j + U)^4,   U = 0.5 V + W,

where ``gamma_j`` is the direct effect of the assigned judge. Random numbers
come from a Philox generator keyed by ``(seed, rep_index, stream)`` so any
replication can be regenerated on its own.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from glate import regress
from glate.clubs import ALPHA_GRID, ClubAssignment, estimate_propensities, select_clubs_grid
from glate.data import CaseTable
from glate.errors import GlateError, UnknownPreset, ValidationError
from glate.late import (
    MODES,
    enumerate_pairs,
    estimate_pair_median,
    estimate_pair_post_selection,
    estimate_pair_single,
    estimate_pair_union,
    select_valid_groups,
)

CLUB_PROPS = (0.97, 0.5, 0.2, 0.05)
CLUB_SIZES = (12, 12, 3, 3)
CASE_SCALE = {"small": 50, "large": 100}
CASE_RANGE = (0.3, 5.0)

_GAMMA_FEW = (0.1, 0.2, 0.3) + (0.0,) * 9 + (-1.0, -1.5, -2.0) + (0.0,) * 15
_GAMMA_MANY = (
    (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    + (0.0,) * 6
    + (-1.0, -1.5, -2.0, -2.5)
    + (0.0,) * 8
    + (0.7, 0.0, 0.0, 0.8, 0.0, 0.0)
)
PRESETS = {
    "no-invalid": (0.0,) * 30,
    "few-invalid": _GAMMA_FEW,
    "many-invalid": _GAMMA_MANY,
}

_STREAM_COUNTS, _STREAM_V, _STREAM_W, _STREAM_ORACLE = 0, 1, 2, 3
_ORACLE_REP = 2**32 - 1
_ORACLE_CHUNK = 1_000_000


@dataclass(frozen=True)
class SimScenario:
    name: str = "no-invalid"
    size: str = "small"
    gamma: tuple = PRESETS["no-invalid"]
    club_props: tuple = CLUB_PROPS
    club_sizes: tuple = CLUB_SIZES
    case_scale: int = CASE_SCALE["small"]
    treatment_effect_base: float = 0.5
    seed: int = 0
    alpha_grid: tuple = ALPHA_GRID
    reps: int = 1000

    def __post_init__(self):
        if sum(self.club_sizes) != self.n_judges:
            raise ValidationError("club sizes must add up to the number of judges")
        if len(self.club_props) != len(self.club_sizes):
            raise ValidationError("club_props and club_sizes differ in length")
        if any(a <= b for a, b in zip(self.club_props, self.club_props[1:])):
            raise ValidationError("club_props must be strictly decreasing")
        if self.reps < 1:
            raise ValidationError("reps must be at least 1")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    @property
    def n_judges(self) -> int:
        return len(self.gamma)

    @property
    def judge_ids(self) -> tuple:
        width = len(str(self.n_judges))
        return tuple(f"J{i + 1:0{width}d}" for i in range(self.n_judges))

    @property
    def judge_props(self) -> np.ndarray:
        return np.repeat(np.asarray(self.club_props, dtype=float), self.club_sizes)

    @property
    def true_clubs(self) -> tuple:
        ids = self.judge_ids
        bounds = np.cumsum((0,) + tuple(self.club_sizes))
        return tuple(tuple(ids[a:b]) for a, b in zip(bounds[:-1], bounds[1:]))

    @property
    def true_pairs(self) -> tuple:
        """Club index pairs (higher propensity, lower propensity) in table order."""
        return tuple(combinations(range(len(self.club_props)), 2))


def scenario_preset(name: str, size: str = "small", *, seed: int = 0, reps: int = 1000,
                    alpha_grid: Sequence[float] = ALPHA_GRID) -> SimScenario:
    """One of the three simulation designs at the small or large case scale."""
    if name not in PRESETS:
        raise UnknownPreset(f"unknown scenario {name!r}; expected one of {sorted(PRESETS)}")
    if size not in CASE_SCALE:
        raise UnknownPreset(f"unknown size {size!r}; expected one of {sorted(CASE_SCALE)}")
    return SimScenario(
        name=name,
        size=size,
        gamma=PRESETS[name],
        case_scale=CASE_SCALE[size],
        seed=seed,
        reps=reps,
        alpha_grid=tuple(alpha_grid),
    )


def _rng(seed: int, rep: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, rep, stream])))


@dataclass(frozen=True)
class SimDraw:
    judge_idx: np.ndarray
    counts: np.ndarray
    v: np.ndarray
    w: np.ndarray
    d: np.ndarray
    y: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    judge_ids: tuple
    rep_index: int

    @property
    def u(self) -> np.ndarray:
        return 0.5 * self.v + self.w

    def to_cases(self) -> CaseTable:
        n = self.y.shape[0]
        return CaseTable(
            outcome=self.y,
            treatment=self.d.astype(float),
            judge_idx=self.judge_idx,
            judge_ids=self.judge_ids,
            case_id=np.array([f"r{self.rep_index}c{i + 1}" for i in range(n)]),
        )


def potential_outcomes(u: np.ndarray, gamma, base: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    y0 = (gamma + u) ** 4
    y1 = (base + 2.0 * u + gamma) ** 4
    return y0, y1


def draw(scenario: SimScenario, rep_index: int) -> SimDraw:
    """Replication ``rep_index`` of ``scenario``; depends on (seed, rep_index) only."""
    lo, hi = CASE_RANGE
    counts_f = scenario.case_scale * _rng(scenario.seed, rep_index, _STREAM_COUNTS).uniform(lo, hi, scenario.n_judges)
    counts = np.rint(counts_f).astype(np.int64)
    judge_idx = np.repeat(np.arange(scenario.n_judges, dtype=np.int64), counts)
    n = judge_idx.shape[0]
    v = _rng(scenario.seed, rep_index, _STREAM_V).uniform(size=n)
    w = _rng(scenario.seed, rep_index, _STREAM_W).uniform(size=n)
    u = 0.5 * v + w
    d = scenario.judge_props[judge_idx] > v
    gamma = np.asarray(scenario.gamma, dtype=float)[judge_idx]
    y0, y1 = potential_outcomes(u, gamma, scenario.treatment_effect_base)
    y = np.where(d, y1, y0)
    return SimDraw(judge_idx, counts, v, w, d, y, y0, y1, scenario.judge_ids, rep_index)


@dataclass(frozen=True)
class OracleTable:
    pairs: tuple
    values: np.ndarray
    n_compliers: np.ndarray

    def value(self, pair: tuple) -> float:
        return float(self.values[self.pairs.index(tuple(pair))])


def oracle_lates(scenario: SimScenario, n_oracle: int = 10_000_000) -> OracleTable:
    """Complier-average treatment effects for every pair of true clubs.

    Potential outcomes are evaluated without direct judge effects, so the
    result does not depend on ``scenario.gamma``. Compliers of the contrast
    between propensities ``p_a > p_b`` are the units with ``p_b <= V < p_a``.
    """
    if n_oracle < 1:
        raise ValidationError("n_oracle must be at least 1")
    props = scenario.club_props
    pairs = scenario.true_pairs
    for a, b in pairs:
        if props[a] == props[b]:
            raise ValidationError("equal propensities leave no compliers")
    rng = _rng(scenario.seed, _ORACLE_REP, _STREAM_ORACLE)
    sums = np.zeros(len(pairs))
    counts = np.zeros(len(pairs), dtype=np.int64)
    left = n_oracle
    while left > 0:
        m = min(left, _ORACLE_CHUNK)
        v = rng.uniform(size=m)
        w = rng.uniform(size=m)
        y0, y1 = potential_outcomes(0.5 * v + w, 0.0, scenario.treatment_effect_base)
        effect = y1 - y0
        for i, (a, b) in enumerate(pairs):
            mask = (v >= props[b]) & (v < props[a])
            sums[i] += effect[mask].sum()
            counts[i] += int(mask.sum())
        left -= m
    with np.errstate(invalid="ignore"):
        values = sums / counts
    return OracleTable(tuple(pairs), values, counts)


def match_clubs(assignment: ClubAssignment, scenario: SimScenario) -> dict | None:
    """Map estimated clubs to true clubs by nearest mean; None unless one-to-one."""
    props = np.asarray(scenario.club_props)
    if assignment.k_selected != len(props):
        return None
    mapping = {c: int(np.argmin(np.abs(props - m))) for c, m in enumerate(assignment.club_means)}
    if len(set(mapping.values())) != len(props):
        return None
    return mapping


def all_iv_tsls(data: CaseTable, se_kind: str = "hc1") -> regress.TslsResult:
    """2SLS with every judge dummy but the first as instruments."""
    Z = data.dummies(data.judge_ids[1:])
    return regress.tsls(data.outcome, data.treatment, Z, se_kind=se_kind)


@dataclass(frozen=True)
class RepResult:
    rep: int
    all_iv_beta: float
    all_iv_se: float
    k: dict
    cons_class: dict
    matched: dict
    estimates: tuple  # (alpha, mode, true pair index, beta, se, sargan_p)
    errors: tuple


@dataclass(frozen=True)
class _RepTask:
    scenario: SimScenario
    rep: int
    alphas: tuple
    estimate: bool
    min_cases: int
    se_kind: str
    fs_threshold: float


def _estimate_rep(data, assignment, mapping, alpha, task, true_pairs, errors):
    out = []
    try:
        pairs = enumerate_pairs(assignment)
        selections = select_valid_groups(data, assignment, alpha)
    except GlateError as exc:
        errors.append(f"alpha={alpha}: {type(exc).__name__}")
        return out
    kw = {"se_kind": task.se_kind, "fs_threshold": task.fs_threshold}
    runners = {
        "single": lambda p: estimate_pair_single(data, p, **kw),
        "union": lambda p: estimate_pair_union(data, p, **kw),
        "median": lambda p: estimate_pair_median(data, p),
        "post-selection": lambda p: estimate_pair_post_selection(data, p, selections, **kw),
    }
    for pair in pairs:
        a, b = sorted((mapping[pair.focal_club], mapping[pair.reference_club]))
        idx = true_pairs.index((a, b))
        for mode, run in runners.items():
            try:
                est = run(pair)
            except GlateError as exc:
                errors.append(f"alpha={alpha} pair={idx + 1} {mode}: {type(exc).__name__}")
                continue
            se = np.nan if est.se is None else est.se
            sp = np.nan if est.sargan_p is None else est.sargan_p
            out.append((alpha, mode, idx, est.beta, se, sp))
    return out


def run_rep(task: _RepTask) -> RepResult:
    sc = task.scenario
    data = draw(sc, task.rep).to_cases()
    errors: list[str] = []
    try:
        full = all_iv_tsls(data, task.se_kind)
        b_all, se_all = full.beta, full.se
    except GlateError as exc:
        errors.append(f"all-iv: {type(exc).__name__}")
        b_all = se_all = np.nan
    truth = {frozenset(c) for c in sc.true_clubs}
    k, cons, matched, estimates = {}, {}, {}, []
    profiles = estimate_propensities(data)
    grid = select_clubs_grid(profiles, data, task.alphas, min_cases=task.min_cases)
    for alpha in task.alphas:
        assignment = grid[alpha]
        k[alpha] = assignment.k_selected
        cons[alpha] = assignment.clubs.as_sets() == truth
        mapping = match_clubs(assignment, sc)
        matched[alpha] = mapping is not None
        if task.estimate and mapping is not None:
            estimates.extend(_estimate_rep(data, assignment, mapping, alpha, task, sc.true_pairs, errors))
    return RepResult(task.rep, b_all, se_all, k, cons, matched, tuple(estimates), tuple(errors))


def _safe_run_rep(task: _RepTask) -> RepResult:
    try:
        return run_rep(task)
    except GlateError as exc:
        nan = float("nan")
        return RepResult(task.rep, nan, nan, {}, {}, {}, (), (f"rep: {type(exc).__name__}: {exc}",))


def thread_cap(threads: int | None = None) -> int:
    """Worker count: explicit value, else GLATE_THREADS, else 1."""
    if threads is None:
        env = os.environ.get("GLATE_THREADS", "").strip()
        threads = int(env) if env else 1
    return max(1, int(threads))


@dataclass
class McReport:
    scenario: SimScenario
    oracle: OracleTable
    alphas: tuple
    classification: list = field(default_factory=list)
    estimation: list = field(default_factory=list)
    raw: list = field(default_factory=list)
    n_failed: int = 0
    error_log: list = field(default_factory=list)


def _aggregate(scenario, oracle, alphas, results: Sequence[RepResult]) -> McReport:
    report = McReport(scenario, oracle, alphas)
    ok = [r for r in results if r.k]
    report.n_failed = len(results) - len(ok)
    report.error_log = [(r.rep, e) for r in results for e in r.errors]
    b_all = np.array([r.all_iv_beta for r in ok])
    se_all = np.array([r.all_iv_se for r in ok])
    n_pairs = len(scenario.true_pairs)
    for alpha in alphas:
        ks = np.array([r.k[alpha] for r in ok])
        matched = np.array([r.matched[alpha] for r in ok])
        report.classification.append(
            {
                "alpha": alpha,
                "tsls": float(np.nanmean(b_all)) if ok else np.nan,
                "tsls_se": float(np.nanmean(se_all)) if ok else np.nan,
                "cons_class": float(np.mean([r.cons_class[alpha] for r in ok])) if ok else np.nan,
                "mean_clubs": float(ks.mean()) if ok else np.nan,
                "rep_k_true": float(np.mean(ks == len(scenario.club_props))) if ok else np.nan,
                "n_reps": len(ok),
                "n_matched": int(matched.sum()),
                "n_unmatched_k_true": int(np.sum((ks == len(scenario.club_props)) & ~matched)),
            }
        )
    rows: dict = {}
    for r in ok:
        for alpha, mode, idx, beta, se, sp in r.estimates:
            rows.setdefault((alpha, mode, idx), []).append((beta, se, sp))
            report.raw.append(
                {"rep": r.rep, "alpha": alpha, "mode": mode, "pair": idx + 1, "beta": beta, "se": se, "sargan_p": sp}
            )
    for alpha in alphas:
        for mode in MODES:
            for idx in range(n_pairs):
                vals = rows.get((alpha, mode, idx))
                if not vals:
                    continue
                arr = np.array(vals, dtype=float)
                beta, se, sp = arr[:, 0], arr[:, 1], arr[:, 2]
                truth = oracle.values[idx]
                has_se = np.isfinite(se)
                lo, hi = beta - 1.96 * se, beta + 1.96 * se
                report.estimation.append(
                    {
                        "alpha": alpha,
                        "mode": mode,
                        "pair": idx + 1,
                        "oracle": float(truth),
                        "beta": float(beta.mean()),
                        "se": float(se[has_se].mean()) if has_se.any() else np.nan,
                        "coverage": float(np.mean((lo <= truth) & (truth <= hi))) if has_se.any() else np.nan,
                        "power": float(np.mean((lo > 0) | (hi < 0))) if has_se.any() else np.nan,
                        "sargan_p": float(np.nanmean(sp)) if np.isfinite(sp).any() else np.nan,
                        "n_used": int(beta.size),
                    }
                )
    return report


def run_monte_carlo(
    scenario: SimScenario,
    *,
    alphas: Sequence[float] | None = None,
    estimate: bool = True,
    threads: int | None = None,
    n_oracle: int = 1_000_000,
    min_cases: int = 1,
    se_kind: str = "hc1",
    fs_threshold: float = 10.0,
    oracle: OracleTable | None = None,
) -> McReport:
    """Run ``scenario.reps`` replications and aggregate them.

    Classification statistics use every replication. Per-pair estimates use
    only replications whose selected clubs match the true clubs one-to-one
    by nearest mean. Per-replication errors are counted, not raised. Results
    do not depend on ``threads``.
    """
    alphas = tuple(scenario.alpha_grid if alphas is None else alphas)
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {a}")
    oracle = oracle_lates(scenario, n_oracle) if oracle is None else oracle
    tasks = [_RepTask(scenario, rep, alphas, estimate, min_cases, se_kind, fs_threshold) for rep in range(scenario.reps)]
    workers = min(thread_cap(threads), len(tasks))
    if workers == 1:
        results = [_safe_run_rep(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_run_rep, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return _aggregate(scenario, oracle, alphas, results)


__all__ = [
    "CASE_SCALE",
    "CLUB_PROPS",
    "CLUB_SIZES",
    "McReport",
    "OracleTable",
    "PRESETS",
    "RepResult",
    "SimDraw",
    "SimScenario",
    "all_iv_tsls",
    "draw",
    "match_clubs",
    "oracle_lates",
    "potential_outcomes",
    "run_monte_carlo",
    "run_rep",
    "scenario_preset",
    "thread_cap",
]
