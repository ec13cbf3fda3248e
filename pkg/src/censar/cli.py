"""
Command line interface.

Exit codes: 0 success, 2 invalid data or configuration, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataio import DataValidationError, check_outdir, emit_reports, fmt_float, load_config, load_panel
from .netlinalg import InfeasibleRhoError

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3

logger = logging.getLogger("censar")


def _add_run_options(p):
    p.add_argument("--flows", required=True, help="CSV with year,exporter,importer,value")
    p.add_argument("--covariates", required=True, help="CSV with year,exporter,importer,<covariates>")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--tol", type=float, help="EM stopping tolerance")
    p.add_argument("--max-iter", type=int, help="maximum EM iterations")
    p.add_argument("--louis-draws", type=int, help="draws for the Louis standard errors")
    p.add_argument("--n-jobs", type=int, help="years fitted in parallel")


def build_parser():
    parser = argparse.ArgumentParser(prog="censar", description="Censored SAR models for network flows.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate the model for every year (coefficients only)")
    _add_run_options(p)
    p = sub.add_parser("forensic", help="estimate and derive under-/over-reporting networks")
    _add_run_options(p)
    p.add_argument("--mode", choices=["untruncated", "truncated"], help="conditional means at censored slots")

    p = sub.add_parser("simulate", help="run a simulation study")
    p.add_argument("design", choices=["dgp1", "dgp2"])
    p.add_argument("--config", help="TOML with a [dgp] table and optional [mcem] settings")
    p.add_argument("--out", required=True)
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("validate-data", help="check a panel and print a summary")
    p.add_argument("--flows", required=True)
    p.add_argument("--covariates", required=True)
    return parser


def _config_from(args, **extra):
    return load_config(
        args.config, seed=args.seed, out=args.out, tol=args.tol, max_iter=args.max_iter,
        n_jobs=args.n_jobs, **extra,
    )


def _run(args, forensic):
    from .pipeline import run_pipeline

    extra = {"louis_draws": args.louis_draws}
    if forensic:
        extra["forensic_mode"] = args.mode
    config = _config_from(args, **extra)
    outdir = check_outdir(config.out)
    panel = load_panel(args.flows, args.covariates)
    result = run_pipeline(panel, config, forensic=forensic)
    if not forensic:
        result.aggregate = None
    emit_reports(result, outdir, config)
    if all(not result.per_year[y].ok for y in result.years):
        print("all years failed; see manifest.json", file=sys.stderr)
        return EXIT_NUMERIC
    for y in result.gaps:
        print(f"year {y} failed: {result.per_year[y].error}", file=sys.stderr)
    print(f"wrote reports for {len(result.years) - len(result.gaps)} of {len(result.years)} years to {outdir}")
    return EXIT_OK


def _simulate(args):
    from dataclasses import asdict

    from .dataio import _mcem_from, tomllib
    from .simlab import DgpConfig, run_study, write_study

    table = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                table = tomllib.load(fh)
        except FileNotFoundError:
            raise DataValidationError(f"{args.config}: config file not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise DataValidationError(f"{args.config}: {exc}") from exc
    dgp = dict(table.get("dgp", {}))
    if args.replications is not None:
        dgp["replications"] = args.replications
    if args.seed is not None:
        dgp["seed"] = args.seed
    try:
        cfg = DgpConfig.dgp2(**dgp) if args.design == "dgp2" else DgpConfig(**dgp)
    except (TypeError, ValueError) as exc:
        raise DataValidationError(f"invalid [dgp] settings: {exc}") from exc
    mcem = dict(table.get("mcem", {}))
    if args.tol is not None:
        mcem["tol"] = args.tol
    fit_config = _mcem_from(mcem)
    outdir = check_outdir(args.out)
    report = run_study(cfg, args.design, fit_config, n_jobs=args.n_jobs)
    write_study(report, outdir)
    summary = {k: [fmt_float(x) for x in v] for k, v in report.summary().items()}
    pairs = report.imputation_pairs()
    if len(pairs) > 1:
        slope, intercept = np.polyfit(pairs[:, 0], pairs[:, 1], 1)
        summary["imputation_slope"] = fmt_float(slope)
        summary["imputation_intercept"] = fmt_float(intercept)
    info = {"design": args.design, "dgp": asdict(cfg), "mcem": asdict(fit_config),
            "n_success": len(report.successes()), "summary_quantiles": [0, 0.25, 0.5, 0.75, 1],
            "summary": summary}
    with open(Path(outdir) / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{info['n_success']} of {cfg.replications} replications succeeded; results in {outdir}")
    return EXIT_OK


def _validate(args):
    panel = load_panel(args.flows, args.covariates)
    print(f"nodes: {panel.n}  edges per year: {panel.n * (panel.n - 1)}  covariates: {', '.join(panel.covariates)}")
    for year in panel.years:
        data = panel.network(year)
        share = data.n_mis / data.N
        print(f"{year}: observed {data.n_obs}, censored {data.n_mis} ({share:.1%}), threshold {data.c:.6g}")
        if data.n_obs <= data.p:
            print(f"{year}: too few observed flows to estimate the model", file=sys.stderr)
            return EXIT_DATA
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        if args.command == "fit":
            return _run(args, forensic=False)
        if args.command == "forensic":
            return _run(args, forensic=True)
        if args.command == "simulate":
            return _simulate(args)
        return _validate(args)
    except DataValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PermissionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, InfeasibleRhoError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
