"""Command-line front end: derive, check, estimate, simulate, list.

Exit codes: 0 success or passing check, 1 failing check or estimator error,
2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import jsonschema

from . import __version__, catalog
from .catalog import ENTRY_IDS, LinearPolicy, get_entry
from .data import read_csv
from .dist import Schema, load_dist
from .dsl import check_if, derive_if, parse_functional
from .dsl.nodes import data_variables
from .errors import (
    DivideByZero,
    EvalFailure,
    FoldTooSmallForLearner,
    IFKitError,
    KTooLarge,
    PositivityViolation,
    QuadratureFailure,
    TruthUnavailable,
    UnknownVariable,
    WeakDenominator,
)
from .estimate import (
    DEFAULT_K,
    RATIO_FLOOR,
    crossfit_estimate,
    full_sample_estimate,
    late_full_onestep,
    plugin_estimate,
)
from .nuisance import LEARNER_GRAMMAR
from .simlab import DGP_IDS, StudyConfig, get_dgp, replication_seed, run_study

ESTIMATOR_ERRORS = (PositivityViolation, WeakDenominator, FoldTooSmallForLearner, KTooLarge, EvalFailure,
                    DivideByZero, QuadratureFailure, TruthUnavailable)
NUISANCE_NAMES = tuple(dict.fromkeys(s.name for i in ENTRY_IDS for s in get_entry(i).manifest))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="parallel workers, at least 1")
    p.add_argument("--out", help="write the JSON result here")
    p.add_argument("--quiet", action="store_true", help="suppress the human summary")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="ifkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ifkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("derive", parents=[common], help="derive an influence function symbolically")
    d.add_argument("--schema", required=True, help='JSON object of variable levels, e.g. {"x":2,"a":2,"y":2}')
    d.add_argument("--expr", required=True, help="functional in the DSL")
    d.add_argument("--trace", help="also write the derivation trace JSON to this path")
    d.add_argument("--no-simplify", action="store_true", help="skip the simplification passes")

    c = sub.add_parser("check", parents=[common], help="compare the derived IF with the numerical oracle")
    c.add_argument("--expr", required=True, help="functional in the DSL")
    c.add_argument("--dist", required=True, help="distribution JSON file")
    c.add_argument("--tol", type=float, default=1e-6, help="max atom-wise gap (default 1e-6)")

    e = sub.add_parser("estimate", parents=[common], help="estimate a catalog functional from a CSV")
    e.add_argument("--functional", help=f"one of {', '.join(ENTRY_IDS)}")
    e.add_argument("--data", help="CSV with columns x1..xd, a, y, optional r, x2_1.., a2")
    e.add_argument("--folds", type=int, default=DEFAULT_K, help="cross-fitting folds (default 5)")
    e.add_argument("--level", type=float, default=0.95, help="confidence level (default 0.95)")
    e.add_argument("--method", choices=("crossfit", "onestep", "plugin", "full-onestep"), default="crossfit")
    e.add_argument("--no-crossfit", action="store_true",
                   help="fit and evaluate nuisances on all rows (diagnostic only)")
    e.add_argument("--learner-default", default=None, help="learner for nuisances without their own flag")
    for name in NUISANCE_NAMES:
        e.add_argument(f"--learner-{name}", dest=f"learner_{name}", default=None, help=f"learner for {name}")
    e.add_argument("--dgp", help="DGP whose analytic nuisances back 'oracle' learners")
    e.add_argument("--broken", action="append", default=[], metavar="NAME=VALUE",
                   help="replace a nuisance by a constant (repeatable)")
    e.add_argument("--policy", help="INTERCEPT,SLOPE of the stochastic policy")
    e.add_argument("--ratio-floor", type=float, default=RATIO_FLOOR, help="denominator floor for ratios")
    e.add_argument("--list-functionals", action="store_true", help="print registered functionals as JSON")

    s = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo study")
    s.add_argument("--config", required=True, help="study configuration JSON")
    s.add_argument("--csv", help="write per-replication records as CSV")
    s.add_argument("--emit-data", metavar="DIR", help="write every replication's dataset as CSV")

    sub.add_parser("list", parents=[common], help="list functionals, DGPs and learner grammars")
    return parser


# output helpers
def _schema(name):
    text = resources.files("ifkit").joinpath("schemas", f"{name}.json").read_text()
    return json.loads(text)


def validate(doc, name):
    jsonschema.validate(doc, _schema(name))


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(args, doc, schema, human=None):
    validate(doc, schema)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(_dump(doc))
    if not args.quiet:
        if human:
            print(human)
        if not args.out:
            sys.stdout.write(_dump(doc))


def _repro(args, command, **settings) -> dict:
    base = {"seed": args.seed, "threads": args.threads}
    base.update(settings)
    return {"package": "ifkit", "version": __version__, "command": command, "settings": base}


# subcommands
def _parse_schema(text) -> Schema:
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--schema is not valid JSON: {exc}") from None
    if not isinstance(spec, dict):
        raise UsageError('--schema must be a JSON object like {"x":2,"a":2,"y":2}')
    try:
        return Schema.of(spec)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--schema: {exc}") from None


def _check_names(expr, schema):
    unknown = sorted(data_variables(expr) - set(schema.names))
    if unknown:
        raise UnknownVariable(f"unknown variable(s) {unknown}; schema has {list(schema.names)}")


def cmd_derive(args) -> int:
    schema = _parse_schema(args.schema)
    expr = parse_functional(args.expr)
    _check_names(expr, schema)
    ifexpr, trace = derive_if(expr, simplify=not args.no_simplify)
    trace.replay()
    doc = {
        "functional": args.expr,
        "schema": dict(schema.variables),
        "influence_function": str(ifexpr),
        "trace": trace.to_json(),
        "reproducibility": _repro(args, "derive", schema=dict(schema.variables), expr=args.expr,
                                  simplify=not args.no_simplify),
    }
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(trace.dumps() + "\n")
    _emit(args, doc, "derive", f"phi(z) = {ifexpr}")
    return 0


def cmd_check(args) -> int:
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    P = load_dist(args.dist)
    expr = parse_functional(args.expr)
    _check_names(expr, P.schema)
    report = check_if(expr, P, tol=args.tol)
    doc = {
        "functional": args.expr,
        "influence_function": str(derive_if(expr)[0]),
        "report": report.to_json(),
        "reproducibility": _repro(args, "check", expr=args.expr, dist=os.path.basename(args.dist), tol=args.tol),
    }
    verdict = "PASS" if report.passed else "FAIL"
    human = (f"{verdict}: max |symbolic - oracle| = {report.max_gap:.3e} (tol {args.tol:g}), "
             f"mean-zero residual = {report.residual:.3e}, atoms = {len(report.rows)}")
    _emit(args, doc, "check", human)
    return 0 if report.passed else 1


def _learners(args, entry) -> dict:
    out = {}
    if args.learner_default:
        out["*"] = args.learner_default
    for s in entry.manifest:
        v = getattr(args, f"learner_{s.name}")
        if v:
            out[s.name] = v
    for s in entry.manifest:
        if s.name not in out and "*" not in out:
            raise UsageError(f"no learner for nuisance {s.name!r}: pass --learner-{s.name} or --learner-default; "
                             f"grammar: {' | '.join(LEARNER_GRAMMAR.values())}")
    return out


def _broken(items, entry) -> dict:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--broken expects NAME=VALUE, got {item!r}")
        try:
            entry.spec(name)
            out[name] = float(value)
        except KeyError:
            raise UsageError(f"--broken: {entry.id} has no nuisance {name!r}; manifest: {list(entry.names)}") from None
        except ValueError:
            raise UsageError(f"--broken: {value!r} is not a number") from None
    return out


def _policy(text):
    if text is None:
        return None
    try:
        i, s = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError("--policy expects INTERCEPT,SLOPE") from None
    return LinearPolicy(i, s)


def cmd_estimate(args) -> int:
    if args.list_functionals:
        doc = {"functionals": catalog.list_entries()}
        _emit(args, doc, "list_functionals")
        return 0
    if not args.functional or not args.data:
        raise UsageError("estimate needs --functional and --data (or --list-functionals)")
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    policy = _policy(args.policy)
    entry = get_entry(args.functional, policy=policy)
    data = read_csv(args.data)
    missing = [r for r in entry.roles if not data.has(r)]
    if missing:
        raise UsageError(f"{entry.id} needs columns for roles {missing}")
    learners = _learners(args, entry)
    broken = _broken(args.broken, entry)
    oracle = get_dgp(args.dgp).true_bundle(entry) if args.dgp else None
    method = "onestep" if args.no_crossfit and args.method == "crossfit" else args.method
    if method == "crossfit":
        est = crossfit_estimate(entry, learners, data, args.folds, args.seed, args.level, oracle, broken,
                                args.threads, args.ratio_floor)
    else:
        est = full_sample_estimate(entry, learners, data, args.seed, args.level, oracle, broken, args.ratio_floor)
        if method == "plugin":
            est = plugin_estimate(entry, est.bundles[0], data)
        elif method == "full-onestep":
            est = late_full_onestep(entry, est.bundles[0], data, args.level)
    doc = est.to_json()
    doc["reproducibility"] = _repro(
        args, "estimate", functional=entry.id, data=os.path.basename(args.data), folds=args.folds,
        level=args.level, method=method, learners={k: str(v) for k, v in sorted(learners.items())},
        dgp=args.dgp, broken=broken, policy=None if policy is None else [policy.intercept, policy.slope],
        ratio_floor=args.ratio_floor)
    _emit(args, doc, "estimate", _estimate_summary(est, method, args))
    return 0


def _estimate_summary(est, method, args) -> str:
    lines = [f"{est.functional} ({method}), n = {est.n}", f"  psi_hat = {est.psi_hat:.6g}"]
    if est.se is not None:
        lines.append(f"  SE = {est.se:.4g}; {100 * est.level:g}% CI = [{est.ci[0]:.6g}, {est.ci[1]:.6g}]")
    lines.append(f"  K = {est.K}, seed = {args.seed}, clamp events = {est.clamp_events}")
    if method == "onestep":
        lines.append("  note: no sample splitting; interval is diagnostic only")
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    validate(raw, "study_config")
    config = StudyConfig.from_json(raw)
    result = run_study(config, threads=args.threads)
    doc = result.to_json()
    doc["reproducibility"] = _repro(args, "simulate", config=config.to_json())
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(result.records_csv())
    if args.emit_data:
        os.makedirs(args.emit_data, exist_ok=True)
        dgp = get_dgp(config.dgp)
        for n in config.n:
            for r in range(config.replications(n)):
                seed = replication_seed(config.seed, n, r)
                dgp.sample(n, seed).to_csv(os.path.join(args.emit_data, f"n{n}_r{r}_seed{seed}.csv"))
    lines = [f"{config.functional} on {config.dgp}: truth = {result.truth:.6g} ({result.truth_note})"]
    for c in result.cells:
        cov = f", coverage = {c['coverage']:.3f} +/- {c['coverage_se']:.3f}" if "coverage" in c else ""
        bias = "n/a" if c["bias"] is None else f"{c['bias']:.4g}"
        rmse = "n/a" if c["rmse_sqrt_n"] is None else f"{c['rmse_sqrt_n']:.4g}"
        lines.append(f"  n = {c['n']}: R = {c['R']}, bias = {bias}, RMSE*sqrt(n) = {rmse}{cov}, "
                     f"failures = {c['failures']}")
    _emit(args, doc, "study_result", "\n".join(lines))
    return 0


def cmd_list(args) -> int:
    doc = {
        "functionals": catalog.list_entries(),
        "dgps": [get_dgp(i).to_json() for i in DGP_IDS],
        "learners": dict(LEARNER_GRAMMAR),
    }
    _emit(args, doc, "list")
    return 0


COMMANDS = {"derive": cmd_derive, "check": cmd_check, "estimate": cmd_estimate, "simulate": cmd_simulate,
            "list": cmd_list}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ifkit {args.command}: {exc}", file=sys.stderr)
        return 2
    except ESTIMATOR_ERRORS as exc:
        print(f"ifkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (IFKitError, OSError, ValueError, jsonschema.ValidationError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else exc
        print(f"ifkit {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
