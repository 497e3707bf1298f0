"""Command-line interface: ``mmgee fit | report | simulate | preprocess``.

Exit codes: 0 success, 2 specification/usage error, 3 data error,
4 numerical error or non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import sys
import warnings

import numpy as np

from . import __version__
from .dataset import (ColumnRoles, PreprocessSpec, ingest_long, preprocess_baseline,
                      read_roles_config, split_names)
from .design import CORRELATION_STRUCTURES, ModelSpec, build_block_problem, build_problem
from .engine import fit_gee
from .errors import MmgeeError, SpecError
from .families import Family
from .inference import (SUMMARY_HEADER, coefficient_table, derive_response, derived_table,
                        efficiency_gain, load_fit, save_fit, summary_rows)
from .simulation import MODELS, SimConfig, monte_carlo, parse_list

EXIT_OK, EXIT_SPEC, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


def parse_index_list(value):
    """``"8,9"`` or ``"1:11"`` (inclusive ranges allowed) to a list of ints."""
    out = []
    for part in (value or "").split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ":" in part:
                a, b = part.split(":", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise SpecError(f"bad index list {value!r}") from None
    return out


def parse_pair(value, what):
    try:
        a, b = (float(v) for v in value.split(","))
    except (ValueError, AttributeError):
        raise SpecError(f"{what} must be 'start,end', got {value!r}") from None
    return a, b


class _Help(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for options that are unset or empty."""

    def _get_help_string(self, action):
        if action.default is None or action.default == "":
            return action.help
        return super()._get_help_string(action)


def _add_data_args(p):
    p.add_argument("--data", help="long-format CSV file")
    p.add_argument("--config", help="key=value file supplying defaults for these options")
    p.add_argument("--id", default="id", help="subject id column")
    p.add_argument("--time", default="time", help="time column")
    p.add_argument("--responses", help="comma-separated response columns; first is reference")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--delimiter", default=",", help="field delimiter")
    p.add_argument("--drop-incomplete", action="store_true",
                   help="drop rows with missing cells instead of failing")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmgee", description="Multivariate marginal models fitted by GEE.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a CSV dataset",
                       formatter_class=_Help)
    _add_data_args(f)
    f.add_argument("--rtype", action="store_true",
                   help="add response-type indicators (separate intercepts)")
    f.add_argument("--interaction", default="",
                   help="1-based covariate positions interacted with rtype, e.g. 8,9 or 1:11")
    f.add_argument("--traditional", action="store_true",
                   help="fit separate coefficient vectors per response (block design)")
    f.add_argument("--family", default="gaussian", choices=["gaussian", "binomial", "poisson"])
    f.add_argument("--link", default=None, choices=["identity", "logit", "probit", "log"])
    f.add_argument("--corstr", default="independence", choices=CORRELATION_STRUCTURES)
    f.add_argument("--dispersion", type=float, default=None,
                   help="fix the dispersion at this value instead of estimating it")
    f.add_argument("--tol", type=float, default=1e-6)
    f.add_argument("--maxit", type=int, default=25)
    f.add_argument("--out-fit", help="write the serialized fit here")
    f.add_argument("--out-csv", help="write the coefficient summary CSV here")
    f.add_argument("--out-corr", help="write the working correlation matrix CSV here")

    r = sub.add_parser("report", help="derived coefficients and efficiency gains from fit files",
                       formatter_class=_Help)
    r.add_argument("--fit", required=True, help="reference fit file")
    r.add_argument("--compare", help="second fit file; gains are relative to --fit")
    r.add_argument("--derive", action="append", default=[], metavar="response=NAME",
                   help="print coefficients on the scale of one response (repeatable)")
    r.add_argument("--model-based", action="store_true",
                   help="use model-based instead of robust covariance")
    r.add_argument("--by", default="response", choices=["response", "coefficient"],
                   help="how coefficients are matched for efficiency gains")
    r.add_argument("--out-csv", help="write derived coefficients / gains CSV here")

    s = sub.add_parser("simulate", help="Monte Carlo comparison of parsimonious vs common models",
                       formatter_class=_Help)
    s.add_argument("--config", help="key=value simulation settings")
    s.add_argument("--reps", type=int, default=None, help="replications; overrides the config file (built-in 500)")
    s.add_argument("--n-subjects", type=int, default=None, help="subjects; overrides the config file (built-in 300)")
    s.add_argument("--seed", type=int, default=None, help="master seed; overrides the config file (built-in 1)")
    s.add_argument("--models", default="", help=f"subset of {','.join(MODELS)}; all when omitted")
    s.add_argument("--structures", default="",
                   help=f"subset of {','.join(CORRELATION_STRUCTURES)}; all when omitted")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    s.add_argument("--out", help="summary CSV (default: stdout)")
    s.add_argument("--draws", help="also write every replication's estimates here")

    pp = sub.add_parser("preprocess", help="windowing, baseline means and time rescaling",
                        formatter_class=_Help)
    _add_data_args(pp)
    pp.add_argument("--baseline", help="baseline window 'start,end' (inclusive)")
    pp.add_argument("--window", help="analysis window 'start,end' (inclusive)")
    pp.add_argument("--baseline-names", help="one new covariate name per response")
    pp.add_argument("--time-offset", type=float, default=0.0)
    pp.add_argument("--time-divisor", type=float, default=1.0)
    pp.add_argument("--time-name", default="week")
    pp.add_argument("--out", help="output CSV (default: stdout)")
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` if one was given."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path or args.command == "simulate":
        return args
    try:
        with open(path, encoding="utf-8") as fh:
            values = read_roles_config(fh)
    except OSError as exc:
        raise SpecError(f"cannot read config {path}: {exc}") from exc
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in known or key == "config":
            raise SpecError(f"unknown config key {key!r} for '{args.command}'")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in _TRUE | _FALSE:
                raise SpecError(f"config key {key!r} expects true/false, got {raw!r}")
            defaults[key] = raw.lower() in _TRUE
        else:
            defaults[key] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _echo(args):
    for key, value in sorted(vars(args).items()):
        print(f"# {key} = {value}", file=sys.stderr)


def _roles(args):
    if not args.data:
        raise SpecError("--data is required")
    responses = split_names(args.responses)
    if not responses:
        raise SpecError("--responses is required")
    return ColumnRoles(args.id, args.time, responses, split_names(args.covariates))


def cmd_fit(args):
    roles = _roles(args)
    interaction = tuple(i - 1 for i in parse_index_list(args.interaction))
    spec = ModelSpec(roles.responses, roles.covariates, args.rtype, interaction,
                     Family(args.family, args.link, args.dispersion), args.corstr)
    if args.traditional and (args.rtype or interaction):
        raise SpecError("--traditional cannot be combined with --rtype/--interaction")
    data = ingest_long(args.data, roles, args.delimiter, args.drop_incomplete)
    print(f"data: {data.describe()}")
    problem = build_block_problem(data, spec) if args.traditional else build_problem(data, spec)
    print(f"stacked design: {problem.n_rows} rows x {problem.n_coef} columns")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_gee(problem, spec.family, spec.corstr, args.tol, args.maxit)
    for w in _unique_warnings(caught):
        print(f"warning: {w}", file=sys.stderr)

    print(f"family: {spec.family.describe()}; working correlation: {fit.correlation.describe()}")
    print(f"dispersion: {fit.scale:.6g}")
    status = "converged" if fit.converged else "DID NOT CONVERGE"
    print(f"Fisher scoring {status} after {fit.n_iter} iteration(s); "
          f"max |delta beta| trace: {', '.join(f'{t:.2e}' for t in fit.trace)}")
    print(coefficient_table(fit))

    if args.out_fit:
        save_fit(fit, args.out_fit)
    if args.out_csv:
        with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            w.writerows(summary_rows(fit))
    if args.out_corr:
        m = int(problem.cluster_sizes.max())
        R = fit.correlation.matrix_for(m)
        np.savetxt(args.out_corr, R, delimiter=",", fmt="%.17g")
    return EXIT_OK if fit.converged else EXIT_NUMERIC


def _unique_warnings(caught):
    seen = []
    for w in caught:
        msg = str(w.message)
        if msg not in seen:
            seen.append(msg)
    return seen


def cmd_report(args):
    source = "model" if args.model_based else "robust"
    fit = load_fit(args.fit)
    print(f"fit: {args.fit} ({fit.family.describe()}, {fit.correlation.describe()}, "
          f"{'converged' if fit.converged else 'not converged'})")
    print(coefficient_table(fit))
    csv_rows = []
    for item in args.derive:
        key, _, name = item.partition("=")
        if key.strip() != "response" or not name.strip():
            raise SpecError(f"--derive expects response=<name>, got {item!r}")
        rows = derive_response(fit, name.strip(), source)
        print(f"\nresponse = {name.strip()} ({source} SE)")
        print(derived_table(rows))
        csv_rows += [["derived", name.strip(), r.covariate, repr(r.estimate), repr(r.se),
                      repr(r.z)] for r in rows]
    if args.compare:
        other = load_fit(args.compare)
        gains = efficiency_gain(fit, other, args.by, source)
        print(f"\nefficiency gain of {args.compare} relative to {args.fit} "
              f"(% decrease in {source} SE)")
        for key, se_ref, se_cmp, gain in gains:
            label = "/".join(key) if isinstance(key, tuple) else key
            print(f"{label:<28}{se_ref:8.2f}{se_cmp:8.2f}{gain:8.1f}%")
            csv_rows.append(["gain", *(key if isinstance(key, tuple) else ("", key)),
                             repr(se_ref), repr(se_cmp), repr(gain)])
    if args.out_csv:
        with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "response", "label", "a", "b", "c"])
            w.writerows(csv_rows)
    return EXIT_OK


def cmd_simulate(args):
    overrides = {"reps": args.reps, "n_subjects": args.n_subjects, "seed": args.seed}
    if args.config:
        config = SimConfig.from_file(args.config, **overrides)
    else:
        config = SimConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})
    for line in config.lines():
        print(f"# {line}", file=sys.stderr)
    models = parse_list(args.models, MODELS)
    structures = parse_list(args.structures, CORRELATION_STRUCTURES)
    summary = monte_carlo(config, models, structures, n_jobs=args.jobs)
    for (model, corstr), cell in summary.cells.items():
        print(f"# cell {model}/{corstr}: {int(cell.ok.sum())}/{config.reps} converged, "
              f"{cell.seconds:.2f}s", file=sys.stderr)
    text = summary.to_csv()
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.draws:
        with open(args.draws, "w", newline="", encoding="utf-8") as fh:
            summary.draws_csv(fh)
    return EXIT_OK


def cmd_preprocess(args):
    roles = _roles(args)
    if not (args.baseline and args.window and args.baseline_names):
        raise SpecError("--baseline, --window and --baseline-names are required")
    spec = PreprocessSpec(
        analysis_window=parse_pair(args.window, "--window"),
        baseline_window=parse_pair(args.baseline, "--baseline"),
        baseline_names=split_names(args.baseline_names),
        time_offset=args.time_offset,
        time_divisor=args.time_divisor,
        time_name=args.time_name,
    )
    data = ingest_long(args.data, roles, args.delimiter, args.drop_incomplete)
    out = preprocess_baseline(data, spec)
    print(f"# preprocessed: {out.describe()}", file=sys.stderr)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            out.to_csv(fh, args.delimiter)
    else:
        out.to_csv(sys.stdout, args.delimiter)
    return EXIT_OK


def _origin(exc) -> str:
    """Name of the package module the exception was raised in."""
    tb, name = exc.__traceback__, "cli"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("mmgee."):
            name = mod.split(".", 1)[1]
        tb = tb.tb_next
    return name


COMMANDS = {"fit": cmd_fit, "report": cmd_report, "simulate": cmd_simulate,
            "preprocess": cmd_preprocess}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        _echo(args)
        return COMMANDS[args.command](args)
    except MmgeeError as exc:
        print(f"error [{_origin(exc)}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
