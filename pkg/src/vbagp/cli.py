"""Command-line interface: ``vbagp <verb> [options]``.

Verbs
    list-problems   registered benchmark problems
    run             replicated experiment, persisted under ``--out``
    report          aggregates of a stored experiment, plus figures
    reference       reference failure probability computed on the true function
    plot-data       per-iteration V_X / V_Gn series as CSV, plus figures

Tabular output goes to stdout as comma-separated text.  Exit status is 0 on
success, 2 when any run did not converge and 1 on a fatal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .problems import PROBLEMS, get_problem

EXIT_OK, EXIT_FATAL, EXIT_NONCONVERGED = 0, 1, 2

log = logging.getLogger("vbagp")


class CliError(Exception):
    pass


def _writer():
    return csv.writer(sys.stdout, lineterminator="\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def _print_aggregates(report) -> None:
    w = _writer()
    w.writerow(["key", "value"])
    w.writerow(["problem", report.config.problem])
    w.writerow(["method", report.config.method])
    for k, v in report.aggregates.items():
        w.writerow([k, _fmt(v)])
    if report.reference:
        w.writerow(["reference_pf", _fmt(report.reference["pf"])])
        w.writerow(["reference_provenance", report.reference["provenance"]])


def _print_runs(report) -> None:
    w = _writer()
    w.writerow(["run", "pf", "n_call", "converged", "failure"])
    for i, r in enumerate(report.records):
        w.writerow([i, _fmt(r.pf), r.n_call, r.converged, r.failure or ""])


def _build_config(args) -> ex.ExperimentConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
    d = {"problem": base.get("problem"), "method": base.get("method"), "n_runs": base.get("n_runs", 1),
         "seed": base.get("seed", 0), "settings": dict(base.get("settings", {}))}
    for key, attr in (("problem", "problem"), ("method", "method"), ("n_runs", "runs"), ("seed", "seed")):
        if getattr(args, attr, None) is not None:
            d[key] = getattr(args, attr)
    for key in ("cov_max", "n_mc_init", "n_doe_init"):
        if getattr(args, key, None) is not None:
            d["settings"][key] = getattr(args, key)
    if not d["problem"] or not d["method"]:
        raise CliError("--problem and --method are required (directly or through --config)")
    try:
        cfg = ex.ExperimentConfig.from_dict(d)
        cfg.method_config()  # reject unknown settings before any work starts
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(str(exc)) from exc
    return cfg


def cmd_list_problems(args) -> int:
    w = _writer()
    w.writerow(["name", "dim", "reference_pf", "reference_cov", "description", "provenance"])
    for p in PROBLEMS.values():
        ref = p.reference
        w.writerow([p.name, p.dim, _fmt(ref.pf if ref else None), _fmt(ref.cov if ref else None),
                    p.description, ref.provenance if ref else ""])
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _build_config(args)
    report = ex.execute(cfg, args.out, args.jobs)
    _print_runs(report)
    _print_aggregates(report)
    if args.out:
        _render(report, Path(args.out))
    return EXIT_NONCONVERGED if report.any_nonconverged else EXIT_OK


def _render(report, out: Path) -> None:
    from . import plotting

    figs = out / "figures"
    paths = plotting.plot_report(report, figs)
    for i, r in enumerate(report.records):
        rows = plotting.variance_series(r)
        p = plotting.plot_variance_series(rows, figs / f"variances_run_{i:03d}.png",
                                          f"{r.problem} / {r.method} run {i}")
        if p is not None:
            paths.append(p)
    for p in paths:
        log.info("wrote %s", p)


def _load(out) -> ex.ExperimentReport:
    try:
        return ex.load(out)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot load experiment from {out}: {exc}") from exc


def cmd_report(args) -> int:
    report = _load(args.out)
    ref = report.reference["pf"] if report.reference else None
    fresh = ex.aggregate(report.records, ref)
    if json.dumps(fresh, sort_keys=True) != json.dumps(report.aggregates, sort_keys=True):
        raise CliError("stored aggregates do not match the per-run records")
    _print_runs(report)
    _print_aggregates(report)
    if not args.no_figures:
        _render(report, Path(args.out))
    return EXIT_NONCONVERGED if report.any_nonconverged else EXIT_OK


def cmd_reference(args) -> int:
    try:
        problem = get_problem(args.problem)
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from exc
    method = "is-reference" if args.importance else "mcs-reference"
    settings = {"n_samples": args.samples}
    report = ex.run_experiment(problem.name, method, args.runs or 1, settings, args.seed or 0, args.out)
    w = _writer()
    w.writerow(["run", "pf", "cov", "n_call"])
    for i, r in enumerate(report.records):
        w.writerow([i, _fmt(r.pf), _fmt(r.cov_tot["point"]) if r.cov_tot else "", r.n_call])
    _print_aggregates(report)
    return EXIT_NONCONVERGED if report.any_nonconverged else EXIT_OK


def cmd_plot_data(args) -> int:
    from . import plotting

    report = _load(args.out)
    dest = Path(args.dest) if args.dest else Path(args.out) / "plot-data"
    dest.mkdir(parents=True, exist_ok=True)
    picks = range(len(report.records)) if args.run is None else [args.run]
    w = _writer()
    w.writerow(["run", "rows", "csv", "figure"])
    for i in picks:
        if not 0 <= i < len(report.records):
            raise CliError(f"run index {i} out of range")
        r = report.records[i]
        rows = plotting.variance_series(r)
        path = plotting.write_series_csv(rows, dest / f"variances_run_{i:03d}.csv")
        fig = None if args.no_figures else plotting.plot_variance_series(
            rows, dest / f"variances_run_{i:03d}.png", f"{r.problem} / {r.method} run {i}")
        w.writerow([i, len(rows), path, fig or ""])
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which here means "not converged"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FATAL, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vbagp", description="Variance-based active GP reliability analysis")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    sub.add_parser("list-problems", help="list registered problems").set_defaults(func=cmd_list_problems)

    r = sub.add_parser("run", help="run a replicated experiment")
    r.add_argument("--problem")
    r.add_argument("--method", choices=ex.METHODS)
    r.add_argument("--runs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--config", help="JSON file with problem, method, n_runs, seed and settings")
    r.add_argument("--out", help="experiment directory (records, report, figures)")
    r.add_argument("--cov-max", type=float)
    r.add_argument("--n-mc-init", type=int)
    r.add_argument("--n-doe-init", type=int)
    r.add_argument("--jobs", type=int, default=1, help="worker processes")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize a stored experiment")
    rep.add_argument("--out", required=True, help="experiment directory")
    rep.add_argument("--no-figures", action="store_true")
    rep.set_defaults(func=cmd_report)

    ref = sub.add_parser("reference", help="reference probability on the true function")
    ref.add_argument("--problem", required=True)
    ref.add_argument("--samples", type=int, default=1_000_000)
    ref.add_argument("--runs", type=int)
    ref.add_argument("--seed", type=int)
    ref.add_argument("--importance", action="store_true",
                     help="importance sampling instead of crude MC (for very rare events)")
    ref.add_argument("--out")
    ref.set_defaults(func=cmd_reference)

    pd = sub.add_parser("plot-data", help="export per-iteration variance series")
    pd.add_argument("--out", required=True, help="experiment directory")
    pd.add_argument("--run", type=int)
    pd.add_argument("--dest", help="output directory (default: <out>/plot-data)")
    pd.add_argument("--no-figures", action="store_true")
    pd.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except Exception as exc:  # noqa: BLE001 - any unexpected failure is fatal
        log.debug("fatal", exc_info=True)
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
