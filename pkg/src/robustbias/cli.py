"""Command-line interface.

    robustbias analyze    [options]   bounds over the quality set of the chosen domains
    robustbias enumerate  [options]   list the quality vectors only
    robustbias unadjusted [options]   the model with every quality equal to one
    robustbias report RESULTS.json    redraw table and forestplot from saved results
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from fractions import Fraction
from pathlib import Path

import numba
import numpy as np

from . import __version__
from .fileio import (
    FORMAT_VERSION,
    RunConfig,
    dump_json,
    load_config,
    read_results,
    read_rob_json,
    read_study_csv,
    results_to_dict,
    summary_to_dict,
)
from .quality_sets import build_set_spec, enumerate_quality_vectors
from .report import bounds_table, forestplot_model, render_forestplot
from .robust import analyze_over_set, analyze_unadjusted, compare_to_unadjusted

log = logging.getLogger("robustbias")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--data", help="study CSV (default: bundled Rituximab data)")
    common.add_argument("--rob", help="risk-of-bias JSON (default: bundled table)")
    common.add_argument("--domains", help="comma-separated domain ids, or 'all'")
    common.add_argument("--constraints", help="JSON list of quality blocks for multi-domain selections")
    common.add_argument("--grid-spacing", help="simplex weight spacing 1/m, e.g. 0.1")
    common.add_argument("--box-points", type=int, help="grid points per axis for box-shaped sets")
    common.add_argument("--samples", type=int, help="retained samples per chain")
    common.add_argument("--burnin", type=int, help="burn-in sweeps per chain")
    common.add_argument("--chains", type=int, help="number of chains")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--threshold", type=float, action="append", help="exceedance threshold t (repeatable)")
    common.add_argument("--workers", type=int, help="parallel worker threads")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="robustbias", description="Robust Bayesian bias-adjusted meta-analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="bounds over the quality set")
    sub.add_parser("enumerate", parents=[common], help="enumerate quality vectors")
    sub.add_parser("unadjusted", parents=[common], help="run with all qualities equal to one")
    rep = sub.add_parser("report", parents=[common], help="re-render outputs from saved results")
    rep.add_argument("results", help="results JSON written by 'analyze'")
    rep.add_argument("--odds-ratio-axis", action="store_true", help="label the forestplot axis as odds ratios")
    return parser


def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.data:
        config.data_path = args.data
    if args.rob:
        config.rob_path = args.rob
    if args.domains:
        config.domains = RunConfig(domains=args.domains).domains
    if args.constraints:
        config.extra_constraints = json.loads(Path(args.constraints).read_text(encoding="utf-8"))
    if args.grid_spacing:
        config.enumeration["weight_spacing"] = str(Fraction(args.grid_spacing).limit_denominator(10**6))
    if args.box_points:
        config.enumeration["box_points_per_axis"] = args.box_points
    for flag, key in (("samples", "n_samples"), ("burnin", "n_burnin"), ("chains", "n_chains"), ("seed", "seed")):
        value = getattr(args, flag)
        if value is not None:
            config.mcmc[key] = value
    if args.threshold:
        config.thresholds = list(args.threshold)
    if args.workers:
        config.workers = args.workers
    if args.out:
        config.out_dir = args.out
    return config


def manifest(config: RunConfig, command: str) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "command": command,
        "config": config.to_dict(),
        "seed": config.seed,
        "versions": {
            "robustbias": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba.__version__,
        },
    }


def _load_inputs(config):
    data = read_study_csv(config.resolved_data_path())
    rob = read_rob_json(config.resolved_rob_path(), data)
    return data, rob


def _vectors(config, rob):
    spec = build_set_spec(rob, config.domains, config.policy(), config.extra_constraints)
    return enumerate_quality_vectors(spec, config.enumeration_config())


def _domain_label(config) -> str:
    return ", ".join(config.domains)


def cmd_enumerate(config, out: Path) -> None:
    _, rob = _load_inputs(config)
    vectors = _vectors(config, rob)
    dump_json({"format_version": FORMAT_VERSION, "domains": config.domains, "count": len(vectors),
               "vectors": [list(q) for q in vectors]}, out / "vectors.json")
    print(len(vectors))


def cmd_unadjusted(config, out: Path) -> None:
    data, _ = _load_inputs(config)
    summary = analyze_unadjusted(data, config.hyper(), config.settings(), config.quantities())
    dump_json({"format_version": FORMAT_VERSION, "studies": data.names, "unadjusted": summary_to_dict(summary)},
              out / "unadjusted.json")
    for t, p in summary.exceedance.items():
        print(f"P(mu > {t:g}) = {p:.3f}")
    print(f"E(mu) = {summary.mean_mu:.3f}")
    for level, v in summary.percentiles_mu.items():
        print(f"P{100 * level:g}%(mu) = {v:.3f}")


def _render(bounds, unadjusted, names, domain_label, config, out: Path, odds_ratio_axis=False) -> None:
    rows = compare_to_unadjusted(bounds, unadjusted, config.decision_probability, config.reference_value)
    table = bounds_table(rows, bounds, domain_label, names)
    (out / "table.txt").write_text(table, encoding="utf-8")
    model = forestplot_model(bounds, unadjusted, names)
    render_forestplot(model, out / "forestplot.svg", title=f"Bias domain {domain_label}", odds_ratio_axis=odds_ratio_axis)
    sys.stdout.write(table)


def cmd_analyze(config, out: Path) -> None:
    data, rob = _load_inputs(config)
    vectors = _vectors(config, rob)
    hyper, settings, quantities = config.hyper(), config.settings(), config.quantities()
    log.info("analysing %d quality vectors", len(vectors))

    def progress(done, total):
        if done % max(1, total // 20) == 0 or done == total:
            log.info("%d/%d quality vectors done", done, total)

    bounds = analyze_over_set(data, hyper, vectors, settings, quantities, workers=config.workers, progress=progress)
    unadjusted = analyze_unadjusted(data, hyper, settings, quantities)
    dump_json(results_to_dict(bounds, unadjusted, data.names, config.domains), out / "results.json")
    _render(bounds, unadjusted, data.names, _domain_label(config), config, out)


def cmd_report(config, out: Path, results_path, odds_ratio_axis) -> None:
    bounds, unadjusted, doc = read_results(results_path)
    if unadjusted is None:
        raise ValueError(f"{results_path}: no unadjusted summary to compare against")
    _render(bounds, unadjusted, doc["studies"], ", ".join(doc["domains"]), config, out, odds_ratio_axis)


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        config = resolve_config(args)
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(manifest(config, args.command), out / "manifest.json")
        if args.command == "enumerate":
            cmd_enumerate(config, out)
        elif args.command == "unadjusted":
            cmd_unadjusted(config, out)
        elif args.command == "analyze":
            cmd_analyze(config, out)
        else:
            cmd_report(config, out, args.results, args.odds_ratio_axis)
    except (ValueError, OSError, KeyError, TypeError) as exc:
        module = getattr(type(exc), "__module__", "robustbias")
        if module == "builtins":
            module = "robustbias"
        print(f"{module}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
