"""Command-line interface.

Subcommands: ``bound``, ``simulate``, ``verify``, ``estimate``, ``sharpness``.
Values from ``--config`` (a JSON object, or a previous JSON report whose
``config`` entry is reused) act as defaults; explicit flags override them.
Exit status: 0 on success, 2 when a verification verdict fails, 1 on errors
(printed to stderr as ``CODE: message``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__, bounds, estimators, montecarlo, processes
from .errors import ConfigurationError, MartboundsError

SCHEMA_VERSION = 1
PROCESSES = ("rademacher", "three-point", "sin-cos", "bounded-below", "bernstein-two-point")


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def _clean(obj):
    """Make ``obj`` JSON-safe (numpy scalars, tuples, non-finite floats)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".martbounds-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _report(args, command, results, families):
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "martbounds",
        "version": __version__,
        "command": command,
        "seed": getattr(args, "seed", None),
        "trials": getattr(args, "trials", None),
        "families": sorted(set(families)),
        "config": _config_of(args),
        "results": results,
    }


def _config_of(args):
    skip = {"func", "config", "output"}
    return _clean({k: v for k, v in sorted(vars(args).items()) if k not in skip})


def _emit(args, report, rows=None, columns=None):
    """Render the report as JSON, or as CSV with a provenance comment line."""
    if args.format == "json" or rows is None:
        text = json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"
    else:
        out = io.StringIO()
        meta = {k: report[k] for k in ("schema_version", "version", "command", "seed", "trials", "families", "config")}
        out.write("# " + json.dumps(_clean(meta), sort_keys=True) + "\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
        text = out.getvalue()
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Process construction
# ---------------------------------------------------------------------------


def _need(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise ConfigurationError(f"--{name.replace('_', '-')} is required for --process {args.process}")


def build_process(args):
    p = args.process
    if p is None:
        raise ConfigurationError("--process is required")
    if p == "rademacher":
        if args.weights is None:
            _need(args, "n")
            weights = (1.0,) * args.n
        else:
            weights = tuple(args.weights)
        return processes.RademacherWeighted(weights)
    if p == "three-point":
        _need(args, "y", "vsq", "n")
        return processes.ThreePoint(args.y, args.vsq, args.n)
    if p == "sin-cos":
        _need(args, "n")
        return processes.SinCosRademacher(args.n)
    if p == "bounded-below":
        _need(args, "n")
        return processes.BoundedBelowExponential(args.shift, args.rate, args.n)
    if p == "bernstein-two-point":
        _need(args, "p", "a", "b", "n")
        return processes.BernsteinTwoPoint(args.p, args.a, args.b, args.n)
    raise ConfigurationError(f"unknown process {p!r}; known: {', '.join(PROCESSES)}")


def _pairing_for(family, spec, event_kind):
    if family not in montecarlo.COMPATIBILITY:
        raise ConfigurationError(f"bound family {family!r} has no Monte Carlo pairing")
    for pairing in montecarlo.COMPATIBILITY[family]:
        if spec.kind in pairing.processes and event_kind in pairing.event_kinds:
            return pairing
    raise ConfigurationError(f"{family} has no pairing for process {spec.kind!r} and event {event_kind!r}")


def _default_budget(spec, clause):
    """Deterministic sum of a per-step statistic (independent variants only)."""
    if spec.kind == "sin_cos_rademacher" and clause in ("sq_var", "cond_var", "proxy"):
        return 0.5
    if not spec.independent:
        raise ConfigurationError(f"budget for clause {clause!r} must be given explicitly for {spec.kind}")
    batch = spec.sample(np.random.default_rng(0), 1)
    name = "cond_var" if clause == "sq_var" else clause
    total = math.fsum(np.ravel(batch.increments(name)).tolist())
    if not math.isfinite(total):
        raise ConfigurationError(f"clause {clause!r} is infinite for {spec.kind}")
    return total


def build_bound_and_event(args, spec, x):
    family = args.family
    pairing = _pairing_for(family, spec, args.event)
    clauses = tuple(args.clauses) if args.clauses else tuple(sorted(pairing.clauses))
    v_sq = args.vsq if args.v is None else args.v ** 2
    if v_sq is None and args.event != "self_normalized":
        v_clause = next((c for c in clauses if c in ("sq_var", "cond_var", "proxy")), "cond_var")
        v_sq = _default_budget(spec, v_clause)
    if args.event == "self_normalized":
        v_sq = 1.0
    w = args.w
    needed = bounds.FAMILIES[family][0]
    if w is None and "w" in needed:
        w_clause = next((c for c in clauses if c in ("neg_third", "abs_third")), "neg_third")
        w = _default_budget(spec, w_clause)
    eps = args.epsilon
    if eps is None and "epsilon" in needed:
        eps = -spec.lower if "lower_eps" in pairing.requires else spec.bernstein_eps
        if eps is None:
            raise ConfigurationError(f"--epsilon is required for {family} on {spec.kind}")
    values = {"x": x, "v": math.sqrt(v_sq), "epsilon": eps, "w": w, "n": spec.n, "y": args.y}
    query = bounds.BoundQuery(**{k: values[k] for k in needed})
    bound = bounds.evaluate(family, query)
    budgets = {}
    for c in clauses:
        budgets[c] = w if c in ("neg_third", "abs_third") else v_sq
    event = processes.TailEvent(kind=args.event, x=x, **budgets)
    return bound, event


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

BOUND_COLUMNS = ("family", "x", "v", "epsilon", "w", "n", "y", "alpha", "c",
                 "value", "log_value", "lambda", "clipped", "flag")


def cmd_bound(args):
    needed = bounds.FAMILIES.get(args.family, (None,))[0]
    if needed is None:
        raise ConfigurationError(f"unknown bound family {args.family!r}; known: {', '.join(bounds.FAMILIES)}")
    xs = args.x or [None]
    vs = args.v_grid or [args.v]
    rows = []
    for x in xs:
        for v in vs:
            values = {"x": x, "v": v, "epsilon": args.epsilon, "w": args.w, "n": args.n,
                      "y": args.y, "alpha": args.alpha, "c": args.c}
            query = bounds.BoundQuery(**{k: val for k, val in values.items() if val is not None})
            res = bounds.evaluate(args.family, query)
            row = {k: values[k] for k in ("x", "v", "epsilon", "w", "n", "y", "alpha", "c")}
            row.update(family=res.family, value=res.value, log_value=res.log_value,
                       clipped=res.clipped, flag=res.flag, **{"lambda": res.lam})
            rows.append(row)
    if args.format == "text" and not args.output:
        for r in rows:
            print(f"{r['family']} x={_fmt(r['x'])} v={_fmt(r['v'])} value={_fmt(r['value'])} "
                  f"lambda={_fmt(r['lambda'])}" + (f" flag={r['flag']}" if r["flag"] else ""))
        return 0
    _emit(args, _report(args, "bound", rows, [args.family]), rows, BOUND_COLUMNS)
    return 0


def cmd_simulate(args):
    spec = build_process(args)
    path = processes.sample_path(spec, montecarlo.block_stream(args.seed, 0))
    text = path.to_csv()
    if args.format == "json":
        report = _report(args, "simulate", {c: getattr(path, c).tolist() for c in
                                            ("xi", "s", "sq_var", "cond_var", "neg_third", "abs_third", "v_sum")},
                         [])
        report["process"] = processes.spec_to_dict(spec)
        _emit(args, report)
        return 0
    header = "# " + json.dumps(_clean({"schema_version": SCHEMA_VERSION, "version": __version__,
                                       "command": "simulate", "seed": args.seed,
                                       "config": _config_of(args)}), sort_keys=True) + "\n"
    if args.output:
        write_atomic(args.output, header + text)
    else:
        sys.stdout.write(header + text)
    return 0


def cmd_verify(args):
    spec = build_process(args)
    if not args.family:
        raise ConfigurationError("--family is required")
    if not args.x:
        raise ConfigurationError("--x is required")
    verdicts = []
    for x in args.x:
        bound, event = build_bound_and_event(args, spec, x)
        verdicts.append(montecarlo.verify_bound(spec, event, bound, args.trials, args.seed,
                                                args.confidence))
    rows = [v.as_row() for v in verdicts]
    report = _report(args, "verify", rows, [args.family])
    report["process"] = processes.spec_to_dict(spec)
    _emit(args, report, rows, montecarlo.VERDICT_COLUMNS)
    return 0 if all(v.passed for v in verdicts) else 2


def _curve(func, xs):
    out = []
    for x in xs:
        res = func(x)
        out.append({"x": x, "value": res.value, "log_value": res.log_value, "lambda": res.lam,
                    "family": res.family, "params": res.params})
    return out


def cmd_estimate(args):
    xs = args.x or [1.0, 2.0, 3.0]
    if args.model == "regression":
        _need(args, "input", "sigma")
        phis, obs = estimators.read_regression_csv(args.input)
        data = estimators.RegressionData(phis, obs, args.sigma)
        spec = estimators.EnvelopeSpec(args.envelope, eps1=args.eps1, eps2=args.eps2, eps=args.eps,
                                       alpha=args.alpha, c=args.c)
        result = {
            "estimate": estimators.fit_linear(data),
            "n": data.n,
            "design_energy": data.energy,
            "envelope": _curve(lambda x: estimators.regression_envelope(
                spec, x, sigma=args.sigma, phis=phis), xs),
        }
    elif args.model == "ar1":
        _need(args, "input", "sigma", "eps", "vsq")
        series = estimators.read_ar1_csv(args.input)
        sum_sq = math.fsum(v * v for v in series[:-1])
        result = {
            "estimate": estimators.fit_ar1(series),
            "n": len(series) - 1,
            "sum_sq": sum_sq,
            "L_n": estimators.ar1_proxy(args.eps, args.sigma, sum_sq),
            "envelope": _curve(lambda x: estimators.ar1_envelope(
                args.eps, args.sigma, sum_sq, x, args.vsq), xs),
        }
    elif args.model == "branching":
        _need(args, "input", "m", "sigma", "vsq")
        counts = estimators.read_branching_csv(args.input)
        if len(counts) < 2:
            raise ConfigurationError("branching data needs at least two generations")
        eps = args.eps
        if eps is None and args.kind == "bernstein_two_sided":
            eps = estimators.poisson_bernstein_scale(args.m)
        obs = estimators.BranchingObservation(counts[-2], counts[-1], args.m, args.sigma, eps)
        result = {
            "estimate": estimators.lotka_nagaev(obs),
            "x_prev": obs.x_prev,
            "x_curr": obs.x_curr,
            "envelope": _curve(lambda x: estimators.branching_envelope(args.kind, obs, x, args.vsq), xs),
        }
    else:
        raise ConfigurationError(f"unknown model {args.model!r}")
    families = sorted({row["family"] for row in result["envelope"]})
    _emit(args, _report(args, "estimate", result, families))
    return 0


SHARPNESS_COLUMNS = ("n", "y", "v_sq", "x", "exact_chernoff", "tight", "loose", "trials", "hits",
                     "p_hat", "ci_low", "ci_high", "log_ratio")


def cmd_sharpness(args):
    _need(args, "y", "vsq", "n")
    spec = processes.ThreePoint(args.y, args.vsq, args.n)
    rows = []
    for x in args.x or [3.0, 4.0, 5.0]:
        tight, loose = bounds.fuk_nagaev_bounds(x, args.y, math.sqrt(args.vsq), args.n)
        exact = processes.exact_chernoff_three_point(x, args.y, args.vsq, args.n)
        event = processes.TailEvent("exists_k", x, cond_var=args.vsq)
        est = montecarlo.estimate_tail(spec, event, args.trials, args.seed, args.confidence)
        ratio = math.log(tight.value) / math.log(est.p_hat) if 0 < est.p_hat < 1 else None
        rows.append({"n": args.n, "y": args.y, "v_sq": args.vsq, "x": x, "exact_chernoff": exact,
                     "tight": tight.value, "loose": loose.value, "trials": est.trials, "hits": est.hits,
                     "p_hat": est.p_hat, "ci_low": est.ci_low, "ci_high": est.ci_high, "log_ratio": ratio})
    _emit(args, _report(args, "sharpness", rows, ["fuk-nagaev-tight", "fuk-nagaev-loose"]),
          rows, SHARPNESS_COLUMNS)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p, formats=("csv", "json")):
    p.add_argument("--config", help="JSON config file (or a previous JSON report)")
    p.add_argument("--output", "-o", help="report path (default: stdout)")
    p.add_argument("--format", choices=formats, default=formats[0])


def _process_flags(p):
    p.add_argument("--process", choices=PROCESSES)
    p.add_argument("--weights", type=float, nargs="+")
    p.add_argument("--y", type=float)
    p.add_argument("--vsq", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--shift", type=float, default=-1.0)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--p", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--seed", type=int, default=0)


def _mc_flags(p):
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--confidence", type=float, default=montecarlo.DEFAULT_CONFIDENCE)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 like other configuration errors (2 means a failed verdict)."""

    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="martbounds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"martbounds {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bound", help="evaluate a closed-form tail bound")
    p.add_argument("family")
    p.add_argument("--x", type=float, nargs="+", help="one or more thresholds")
    p.add_argument("--v", type=float)
    p.add_argument("--v-grid", type=float, nargs="+", help="sweep over v (one row per (x, v))")
    for name in ("epsilon", "w", "y", "alpha", "c"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--n", type=int)
    _common(p, formats=("text", "csv", "json"))
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("simulate", help="sample one path and export its statistics")
    _process_flags(p)
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="Monte Carlo verification of a bound")
    _process_flags(p)
    _mc_flags(p)
    p.add_argument("--family")
    p.add_argument("--x", type=float, nargs="+")
    p.add_argument("--v", type=float, help="bound scale (overrides --vsq for the bound)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--w", type=float)
    p.add_argument("--event", choices=processes.EVENT_KINDS, default="exists_k")
    p.add_argument("--clauses", nargs="+", choices=processes.CLAUSES)
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("estimate", help="fit an estimator from CSV and report its envelope")
    p.add_argument("model", choices=("regression", "ar1", "branching"))
    p.add_argument("--input")
    p.add_argument("--sigma", type=float)
    p.add_argument("--envelope", choices=("bernstein", "bounded_above", "alpha_mgf"), default="bounded_above")
    p.add_argument("--eps1", type=float, default=1.0)
    p.add_argument("--eps2", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--vsq", type=float)
    p.add_argument("--m", type=float)
    p.add_argument("--kind", choices=estimators.BRANCHING_KINDS, default="bernstein_two_sided")
    p.add_argument("--x", type=float, nargs="+")
    _common(p, formats=("json",))
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sharpness", help="three-point sharpness study of the tight Fuk-Nagaev bound")
    p.add_argument("--y", type=float, default=1.0)
    p.add_argument("--vsq", type=float, default=10.0)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--x", type=float, nargs="+")
    p.add_argument("--seed", type=int, default=0)
    _mc_flags(p)
    _common(p)
    p.set_defaults(func=cmd_sharpness)
    return parser


def _load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc.msg})") from None
    if isinstance(cfg, dict) and "schema_version" in cfg and isinstance(cfg.get("config"), dict):
        cfg = cfg["config"]
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return cfg


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = _load_config(args.config)
        cfg.pop("command", None)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        # config values become defaults; flags given on the command line win
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        return args.func(args)
    except MartboundsError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"IO_ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
