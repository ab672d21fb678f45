"""Command-line interface: ``glate estimate | simulate | replicate``.

Exit codes: 0 on success, 2 for invalid input, 3 for numerical failures.
Failures also print one ``glate-error`` line to stderr with key=value fields.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from glate import __version__
from glate.errors import GlateError
from glate.io import RunConfig, load_cases, read_config, write_csv, write_records
from glate.late import MODES
from glate.pipeline import EstimateResult, EstimateSettings, estimate_all
from glate.simulate import CASE_SCALE, PRESETS, McReport, run_monte_carlo, scenario_preset

PAIRS_HEADER = [
    "pair_id", "ref_club", "focal_club", "mode", "beta", "se", "ci_lo", "ci_hi",
    "first_stage_f", "weak_flag", "sargan_p", "complier_share", "n",
]
TABLE_LABELS = {"single": "Single", "union": "2SLS", "median": "Med.", "post-selection": "AHC"}


def write_estimate(result: EstimateResult, out: Path) -> list[Path]:
    """Write clubs.csv, pairs.csv and selection.csv; clubs are numbered from 1."""
    raw, kept = result.raw_assignment, result.assignment
    club_of = {j: c + 1 for c, m in enumerate(kept.clubs.members) for j in m}
    raw_club = {j: c + 1 for c, m in enumerate(raw.clubs.members) for j in m}
    raw_mean = {j: raw.club_means[c - 1] for j, c in raw_club.items()}
    clubs_rows = []
    for p in result.profiles:
        status = kept.excluded_judges.get(p.judge, "included")
        clubs_rows.append([p.judge, p.n_cases, p.p_hat, club_of.get(p.judge, ""), raw_mean.get(p.judge), status])

    pairs_rows = []
    for e in result.estimates:
        ci = e.ci95 or (None, None)
        pairs_rows.append([
            e.pair.pair_id, e.pair.reference_club + 1, e.pair.focal_club + 1, e.mode, e.beta, e.se, ci[0], ci[1],
            e.first_stage_f, e.weak if e.first_stage_f is not None else None, e.sargan_p, e.complier_share, e.n,
        ])
    if not result.estimates:
        pairs_rows.append(["NOTE", "; ".join(result.notes) or "no estimates"] + [None] * (len(PAIRS_HEADER) - 2))

    sel_rows = []
    for club, sel in sorted(result.selections.items()):
        keep = set(sel.largest_group)
        for g, members in enumerate(sel.groups.members):
            for j in members:
                sel_rows.append([club + 1, j, sel.gamma_hat[j], g + 1, j in keep, "valid" if j in keep else "excluded"])
    return [
        write_csv(out / "clubs.csv", ["judge_id", "n_cases", "p_hat", "club", "club_mean", "status"], clubs_rows),
        write_csv(out / "pairs.csv", PAIRS_HEADER, pairs_rows),
        write_csv(out / "selection.csv", ["club", "judge_id", "gamma_hat", "group", "in_largest_group", "status"], sel_rows),
    ]


def write_report(report: McReport, out: Path) -> list[Path]:
    sc = report.scenario
    oracle_rows = [[i + 1, a + 1, b + 1, v] for i, ((a, b), v) in enumerate(zip(report.oracle.pairs, report.oracle.values))]
    meta = {
        "scenario": sc.name, "size": sc.size, "seed": sc.seed, "reps": sc.reps,
        "alphas": list(report.alphas), "n_failed": report.n_failed,
    }
    return [
        write_csv(out / "oracle.csv", ["pair", "focal_club", "ref_club", "oracle_late"], oracle_rows),
        write_records(out / "classification.csv", report.classification),
        write_records(out / "estimation.csv", report.estimation,
                      ["alpha", "mode", "pair", "oracle", "beta", "se", "coverage", "power", "sargan_p", "n_used"]),
        write_records(out / "raw_estimates.csv", report.raw,
                      ["rep", "alpha", "mode", "pair", "beta", "se", "sargan_p"]),
        write_csv(out / "errors.csv", ["rep", "message"], report.error_log),
        write_csv(out / "run.csv", ["key", "value"], [[k, json.dumps(v)] for k, v in meta.items()]),
    ]


def classification_table(report: McReport) -> tuple[list, list]:
    header = ["alpha", "2SLS", "SE", "ConsClass", "#clubs", f"RepK{len(report.scenario.club_props)}"]
    rows = [[r["alpha"], r["tsls"], r["tsls_se"], r["cons_class"], r["mean_clubs"], r["rep_k_true"]]
            for r in report.classification]
    return header, rows


def late_table(report: McReport) -> tuple[list, list]:
    n_pairs = len(report.oracle.pairs)
    header = ["Est", "alpha"]
    for i in range(1, n_pairs + 1):
        header += [f"L{i}_beta", f"L{i}_SE", f"L{i}_CIcov", f"L{i}_P", f"L{i}_HS"]
    rows = [["Oracle", None] + [x for v in report.oracle.values for x in (v, None, None, None, None)]]
    by_key = {(r["mode"], r["alpha"], r["pair"]): r for r in report.estimation}
    for mode in MODES:
        for alpha in report.alphas:
            row = [TABLE_LABELS[mode], alpha]
            for i in range(1, n_pairs + 1):
                r = by_key.get((mode, alpha, i), {})
                row += [r.get("beta"), r.get("se"), r.get("coverage"), r.get("power"), r.get("sargan_p")]
            rows.append(row)
    return header, rows


def _config(args) -> RunConfig:
    base = read_config(args.config) if getattr(args, "config", None) else {}
    cfg = RunConfig(**base)
    controls = None if args.controls is None else tuple(c.strip() for c in args.controls.split(",") if c.strip())
    return cfg.updated(
        alpha=args.alpha, min_cases=args.min_cases, first_stage_threshold=args.fs_threshold, se_kind=args.se,
        controls=controls, out_dir=args.out, seed=args.seed, outcome=args.outcome, treatment=args.treatment,
        judge=args.judge, case_id=args.case_id,
    )


def cmd_estimate(args) -> int:
    cfg = _config(args)
    data = load_cases(args.data, cfg.outcome, cfg.treatment, cfg.judge, cfg.controls, cfg.case_id)
    settings = EstimateSettings(cfg.alpha, cfg.min_cases, cfg.first_stage_threshold, cfg.se_kind)
    result = estimate_all(data, settings)
    for p in write_estimate(result, Path(cfg.out_dir)):
        print(p)
    print(f"cases={data.n} judges={data.n_judges} clubs={result.assignment.k_selected} estimates={len(result.estimates)}")
    return 0


def _scenario(args, reps_default: int):
    return scenario_preset(args.scenario, args.size, seed=args.seed or 0, reps=args.reps or reps_default)


def cmd_simulate(args) -> int:
    sc = _scenario(args, 100)
    alphas = None if args.alpha is None else (args.alpha,)
    report = run_monte_carlo(sc, alphas=alphas, estimate=not args.no_estimate, n_oracle=args.n_oracle,
                             min_cases=args.min_cases or 1, se_kind=args.se or "robust",
                             fs_threshold=args.fs_threshold or 10.0)
    for p in write_report(report, Path(args.out or ".")):
        print(p)
    return 0


def cmd_replicate(args) -> int:
    sc = _scenario(args, 1000)
    alphas = None if args.alpha is None else (args.alpha,)
    report = run_monte_carlo(sc, alphas=alphas, estimate=args.table == "late", n_oracle=args.n_oracle,
                             min_cases=args.min_cases or 1, se_kind=args.se or "robust",
                             fs_threshold=args.fs_threshold or 10.0)
    out = Path(args.out or ".")
    stem = f"{args.scenario}_{args.size}"
    header, rows = classification_table(report) if args.table == "classification" else late_table(report)
    paths = [write_csv(out / f"table_{args.table}_{stem}.csv", header, rows)]
    if args.table == "late":
        paths.append(write_records(out / f"hist_{stem}.csv", report.raw,
                                   ["rep", "alpha", "mode", "pair", "beta", "se", "sargan_p"]))
    for p in paths:
        print(p)
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, help="significance level of the cluster-count F tests")
    p.add_argument("--min-cases", type=int, help="drop judges with fewer cases")
    p.add_argument("--fs-threshold", type=float, help="first-stage F below which a pair is flagged weak")
    p.add_argument("--se", choices=["homoskedastic", "robust"], help="standard error type")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="random seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glate", description="Grouped LATE estimation with clubs of judge instruments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate club-pair LATEs from a case file")
    est.add_argument("data", help="UTF-8 CSV with a header row")
    est.add_argument("--outcome")
    est.add_argument("--treatment")
    est.add_argument("--judge")
    est.add_argument("--case-id")
    est.add_argument("--controls", help="comma-separated control columns")
    est.add_argument("--config", help="key=value file; flags take precedence")
    _common(est)
    est.set_defaults(func=cmd_estimate)

    for name, func, table in (("simulate", cmd_simulate, False), ("replicate", cmd_replicate, True)):
        p = sub.add_parser(name, help="run a simulation preset" if not table else "produce a results table")
        p.add_argument("--scenario", choices=sorted(PRESETS), default="no-invalid")
        p.add_argument("--size", choices=sorted(CASE_SCALE), default="small")
        p.add_argument("--reps", type=int)
        p.add_argument("--n-oracle", type=int, default=1_000_000)
        if table:
            p.add_argument("--table", choices=["classification", "late"], default="classification")
        else:
            p.add_argument("--no-estimate", action="store_true", help="classification statistics only")
        _common(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GlateError as exc:
        err, code = exc, exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError, UnicodeDecodeError) as exc:
        err, code = exc, 2
    msg = str(err).replace("\n", " ")
    print(f"glate-error code={code} type={type(err).__name__} message={json.dumps(msg)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
