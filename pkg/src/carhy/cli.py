"""Command-line entry point: ``carhy analyze | simulate | fdr-bench``.

Exit codes: 0 success, 2 input validation failure, 3 finished with flagged
rows.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .errors import CarhyError, InputValidationError
from .pipeline import AnalysisConfig, analyze_all, build_dataset, ingest, preprocess
from .simulation import (
    BUILTIN_CASES,
    FDR_TABLE3,
    TEST_KINDS,
    fdr_spec_from_dict,
    load_scenarios,
    run_fdr_experiment,
    run_rejection_experiment,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FLAGGED = 3

log = logging.getLogger("carhy")


def _default_test(label: str) -> str:
    if label.startswith("TR-"):
        return "TR"
    return {"S1": "TDM", "S2": "TDA", "S3": "TDP"}.get(label[:2], "TDR")


def cmd_analyze(args) -> int:
    matrix, meta = ingest(args.expr, args.meta, args.units)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        matrix = preprocess(matrix, meta)
    ds = build_dataset(matrix, meta)
    cfg = AnalysisConfig(gate_alpha=args.gate_alpha, mc_draws=args.mc_draws,
                         seed=args.seed, threads=args.threads)
    res = analyze_all(ds, cfg)
    res.write(args.out if args.out != "-" else sys.stdout)
    df = res.columns.get("TDR_q")
    if df is not None:
        log.info("%d genes with TDR q <= %g", int((df <= args.alpha).sum()), args.alpha)
    return EXIT_FLAGGED if res.has_error_flags else EXIT_OK


def cmd_simulate(args) -> int:
    specs = dict(BUILTIN_CASES)
    if args.scenario_file:
        specs = load_scenarios(args.scenario_file)
    labels = args.case or list(specs)
    missing = [c for c in labels if c not in specs]
    if missing:
        raise InputValidationError(f"unknown case(s): {missing}")
    reports = []
    for lab in labels:
        test = args.test or _default_test(lab)
        if test == "TR" and specs[lab].K != 1:
            raise InputValidationError(f"case {lab!r}: TR needs a single-condition scenario")
        rep = run_rejection_experiment(specs[lab], test, R=args.reps, alpha=args.alpha,
                                       seed=args.seed, mc_draws=args.mc_draws, threads=args.threads)
        log.info("%s %s rejection rate %.4f", lab, test, rep.rejection_rate)
        reports.append(rep)
    write_metrics_csv(reports, args.out if args.out != "-" else sys.stdout)
    return EXIT_OK


def cmd_fdr_bench(args) -> int:
    if args.spec in FDR_TABLE3:
        spec = FDR_TABLE3[args.spec]
    else:
        path = Path(args.spec)
        if not path.exists():
            raise InputValidationError(
                f"--spec must be one of {sorted(FDR_TABLE3)} or a JSON file, got {args.spec!r}")
        spec = fdr_spec_from_dict(json.loads(path.read_text()))
    rep = run_fdr_experiment(spec, reps=args.reps, seed=args.seed, threads=args.threads)
    log.info("%s FDR %.4f F1 %.4f", spec.label, rep["fdr"].value, rep["f1"].value)
    write_metrics_csv([rep], args.out if args.out != "-" else sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="carhy", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="test every gene of an expression matrix")
    a.add_argument("--expr", required=True, help="genes x samples table (TSV/CSV)")
    a.add_argument("--meta", required=True, help="table with sample_id, condition, time")
    a.add_argument("--units", choices=("tpm", "log"), default="tpm")
    a.add_argument("--alpha", type=float, default=0.05, help="reporting threshold for the log summary")
    a.add_argument("--gate-alpha", type=float, default=0.05)
    a.add_argument("--mc-draws", type=int, default=10_000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--threads", type=int, default=1)
    a.add_argument("--out", default="-")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="rejection-rate experiment for one or more cases")
    s.add_argument("--scenario-file", help="JSON scenarios; built-in cases when omitted")
    s.add_argument("--case", action="append", help="case label (repeatable); default all")
    s.add_argument("--test", choices=TEST_KINDS, help="default inferred from the case label")
    s.add_argument("--reps", type=int, default=2000)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--mc-draws", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fdr-bench", help="many-gene FDR / F1 experiment")
    f.add_argument("--spec", default="table3-K2", help="table3-K2, table3-K3 or a JSON file")
    f.add_argument("--reps", type=int, default=10)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--threads", type=int, default=1)
    f.add_argument("--out", default="-")
    f.set_defaults(func=cmd_fdr_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CarhyError, ValueError, OSError, KeyError) as exc:
        print(f"carhy: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
