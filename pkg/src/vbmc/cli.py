"""Command-line interface: problem generation, benchmark sweeps, inference."""

import argparse
import json
import sys

import numpy as np

from .benchmark import (
    FAMILIES,
    RunConfig,
    make_problem,
    run_benchmark,
    summarize_records,
    verify_ground_truth,
    write_long_csv,
    write_summary_csv,
)
from .core import VBMC, VBMCOptions


def _add_generate(sub):
    p = sub.add_parser("generate", help="emit problem definitions with ground truth")
    p.add_argument("--family", nargs="+", default=list(FAMILIES), choices=FAMILIES)
    p.add_argument("--dims", nargs="+", type=int, default=[2])
    p.add_argument("--problem-seed", type=int, default=0)
    p.add_argument("--check", action="store_true",
                   help="cross-check ground truth with an independent oracle")
    p.add_argument("--out", default="-", help="output JSON-lines path ('-' = stdout)")


def _add_run(sub):
    p = sub.add_parser("run", help="execute a benchmark sweep")
    p.add_argument("--family", nargs="+", default=["lumpy"], choices=FAMILIES)
    p.add_argument("--dims", nargs="+", type=int, default=[2])
    p.add_argument("--seeds", type=int, default=20, help="number of seeded runs")
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--acq", choices=["us", "pro"], default="pro")
    p.add_argument("--budget-multiplier", type=float, default=1.0)
    p.add_argument("--problem-seed", type=int, default=0)
    p.add_argument("--meta-seed", type=int, default=0)
    p.add_argument("--out", default="records.jsonl")
    p.add_argument("--long-csv", default=None,
                   help="also write per-checkpoint long-format CSV")


def _add_summarize(sub):
    p = sub.add_parser("summarize", help="medians + bootstrap CIs from records")
    p.add_argument("records", help="JSON-lines records file")
    p.add_argument("--out", default="summary.csv")
    p.add_argument("--boot-seed", type=int, default=0)


def _add_infer(sub):
    p = sub.add_parser("infer", help="run inference on a single problem config")
    p.add_argument("config", help="JSON config file")
    p.add_argument("--out", default="-", help="result JSON path ('-' = stdout)")
    p.add_argument("--diagnostics", default=None, help="per-iteration JSONL path")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="vbmc",
        description="Variational Bayesian Monte Carlo: sample-efficient "
        "posterior and model-evidence estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_generate(sub)
    _add_run(sub)
    _add_summarize(sub)
    _add_infer(sub)
    args = parser.parse_args(argv)

    if args.command == "generate":
        return _cmd_generate(args)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "summarize":
        return _cmd_summarize(args)
    if args.command == "infer":
        return _cmd_infer(args)
    return 2


def _open_out(path):
    return sys.stdout if path == "-" else open(path, "w")


def _cmd_generate(args):
    fh = _open_out(args.out)
    for family in args.family:
        for D in args.dims:
            if family == "cigar" and D < 2:
                continue
            problem = make_problem(family, D, args.problem_seed)
            entry = problem.to_json()
            if args.check:
                report = verify_ground_truth(problem)
                entry["check"] = {
                    "method": report["method"],
                    "lml": report["lml"],
                    "ess": report["ess"],
                }
            fh.write(json.dumps(entry) + "\n")
    if fh is not sys.stdout:
        fh.close()
    return 0


def _cmd_run(args):
    config = RunConfig(
        families=tuple(args.family),
        dims=tuple(args.dims),
        seeds=tuple(range(args.seed_start, args.seed_start + args.seeds)),
        acq=args.acq,
        budget_multiplier=args.budget_multiplier,
        problem_seed=args.problem_seed,
        meta_seed=args.meta_seed,
        out=args.out,
    )

    def progress(rec):
        print(
            f"{rec.problem_id} seed {rec.run_seed}: "
            f"lml_err {rec.final['lml_err']:.3f} gskl {rec.final['gskl']:.3f} "
            f"({rec.wall_time:.0f}s)",
            flush=True,
        )

    records = run_benchmark(config, progress=progress)
    if args.long_csv:
        write_long_csv(records, args.long_csv)
    rows = summarize_records(records)
    for row in rows:
        print(
            f"{row['family']} D={row['D']}: median lml_err "
            f"{row['lml_err_median']:.3f} gskl {row['gskl_median']:.3f} "
            f"({row['runs']} runs)"
        )
    return 0


def _cmd_summarize(args):
    with open(args.records) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    rows = summarize_records(records, boot_seed=args.boot_seed)
    write_summary_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_infer(args):
    with open(args.config) as fh:
        config = json.load(fh)
    pspec = config["problem"]
    problem = make_problem(
        pspec["family"], int(pspec["D"]), int(pspec.get("seed", 0))
    )
    options = VBMCOptions(**config.get("options", {}))
    x0 = config.get("x0")
    spec = problem.problem_spec(x0=np.asarray(x0, float) if x0 else None)
    if "bounds" in config:
        from .transforms import ParameterTransform

        tr = ParameterTransform.from_config(config["bounds"])
        spec.lb, spec.ub, spec.plb, spec.pub = tr.lb, tr.ub, tr.plb, tr.pub
    engine = VBMC(spec, options)
    result = engine.run(seed=int(config.get("seed", 0)), diagnostics=args.diagnostics)
    out = {
        "problem_id": problem.problem_id,
        "elbo_mean": result.elbo_mean,
        "elbo_sd": result.elbo_sd,
        "stable": result.stable,
        "iterations": result.iterations,
        "fevals": result.fevals,
        "lml_true": problem.lml_true,
        "posterior": result.vp.to_json(),
        "transform": result.transform.to_config(),
    }
    fh = _open_out(args.out)
    fh.write(json.dumps(out, indent=2) + "\n")
    if fh is not sys.stdout:
        fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
