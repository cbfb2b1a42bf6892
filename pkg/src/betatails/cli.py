"""Command-line front end.

Data goes to stdout (or ``--output``), logs to stderr.  Exit codes: 0 success,
2 parameter or usage error, 3 verification failure.
"""
import argparse
import csv
import io
import json
import logging
import math
import os
import sys

from . import __version__
from .eigentri import lambda_max, lambda_min
from .ensembles import HermiteParams, LaguerreParams, ParameterError, sample_hermite, sample_laguerre
from .experiments import (
    FitError,
    FitReport,
    TailQuery,
    estimate_tail_sweep,
    exponent_sweep,
    lower_bound_ratio,
    ratio_spread,
    set_workers,
    tw_center_stability,
    variance_scan,
)
from .randkit import RngStream, derive_seed
from .verify import SUITES, run_suite

log = logging.getLogger("betatails")

DEFAULT_SEED = 20100101
WORKERS_ENV = "BETATAILS_WORKERS"
EXIT_OK, EXIT_PARAM, EXIT_VERIFY = 0, 2, 3

TAIL_COLUMNS = ["ensemble", "side", "extremal", "n", "beta", "kappa", "eps", "samples",
                "hits", "p_hat", "ci_low", "ci_high", "seed"]
FIT_COLUMNS = ["slope", "intercept", "residual_rms", "points_used", "points_excluded",
               "expected_power", "fit_status"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARAM, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text):
    vals = _float_list(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


# ---------------------------------------------------------------------------
# output

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        raise ValueError(f"refusing to emit non-finite number {v}")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def render(rows, columns, fmt, config):
    """Serialize rows (dicts) as CSV (fixed column order) or JSON."""
    for r in rows:
        for k in columns:
            x = r.get(k)
            if isinstance(x, float) and not math.isfinite(x):
                raise ValueError(f"non-finite value in column {k}")
    if fmt == "json":
        body = {"config": config, "results": [{k: r.get(k) for k in columns} for r in rows]}
        return json.dumps(_jsonable(body), indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in columns])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommands

def _tail_query(a, eps):
    kappa = a.kappa if a.ensemble == "laguerre" else None
    if a.ensemble == "hermite" and a.kappa is not None:
        raise ParameterError("--kappa only applies to --ensemble laguerre")
    return TailQuery(a.ensemble, a.side, a.n, a.beta, eps, a.samples, a.seed,
                     extremal=a.extremal, kappa=kappa)


def _tail_row(q, est):
    return {"ensemble": q.ensemble, "side": q.side, "extremal": q.extremal, "n": q.n,
            "beta": float(q.beta), "kappa": None if q.kappa is None else float(q.kappa),
            "eps": float(q.eps), "samples": q.samples, "hits": est.hits, "p_hat": est.p_hat,
            "ci_low": est.ci_low, "ci_high": est.ci_high, "seed": q.seed}


def cmd_tail(a):
    queries = [_tail_query(a, e) for e in a.eps]  # validates every eps before work
    ests = estimate_tail_sweep(queries[0], a.eps, workers=a.workers)
    return [_tail_row(q, e) for q, e in zip(queries, ests)], TAIL_COLUMNS


def _default_power(a):
    if a.expected_power is not None:
        return a.expected_power
    return 3.0 if (a.side == "lower" and a.extremal == "max") else 1.5


def _fit_fields(fit, expected):
    if isinstance(fit, FitReport):
        return {"slope": fit.slope, "intercept": fit.intercept, "residual_rms": fit.residual_rms,
                "points_used": fit.points_used, "points_excluded": fit.points_excluded,
                "expected_power": expected, "fit_status": "ok"}
    return {"expected_power": expected, "fit_status": f"error: {fit}"}


def cmd_fit(a):
    grid = a.eps_grid
    queries = [_tail_query(a, e) for e in grid]
    expected = _default_power(a)
    pairs, fit, outside = exponent_sweep(queries[0], grid, expected, workers=a.workers)
    extra = _fit_fields(fit, expected)
    rows = []
    est_by_eps = dict(pairs)
    for q in queries:
        if q.eps in est_by_eps:
            row = _tail_row(q, est_by_eps[q.eps])
            row["in_window"] = True
        else:
            row = _tail_row(q, _Blank)
            row["in_window"] = False
        row.update(extra)
        rows.append(row)
    if isinstance(fit, FitError):
        log.warning("exponent fit failed: %s", fit)
    else:
        log.info("fitted slope %.4f (expected %.4g), %d points used, %d excluded",
                 fit.slope, expected, fit.points_used, fit.points_excluded)
    return rows, TAIL_COLUMNS + ["in_window"] + FIT_COLUMNS


class _Blank:
    hits = p_hat = ci_low = ci_high = None


def cmd_variance(a):
    if a.ensemble == "laguerre" and a.kappa_ratio is None:
        raise ParameterError("--kappa-ratio is required for laguerre")
    rows, fit = variance_scan(a.n_grid, a.beta, a.samples, a.seed, ensemble=a.ensemble,
                              kappa_ratio=a.kappa_ratio, workers=a.workers)
    out = []
    for n, kappa, mean, var in rows:
        out.append({"ensemble": a.ensemble, "n": n, "beta": float(a.beta),
                    "kappa": None if kappa is None else float(kappa), "samples": a.samples,
                    "mean": mean, "var": var, "slope": fit.slope, "intercept": fit.intercept,
                    "residual_rms": fit.residual_rms, "seed": a.seed})
    cols = ["ensemble", "n", "beta", "kappa", "samples", "mean", "var", "slope", "intercept",
            "residual_rms", "seed"]
    return out, cols


def cmd_lower_ratio(a):
    rows = lower_bound_ratio(a.side, a.n, a.beta, a.eps_grid, a.samples, a.seed, workers=a.workers)
    spread = ratio_spread(rows)
    out = [dict(r, side=a.side, n=a.n, beta=float(a.beta), samples=a.samples, spread=spread,
                seed=a.seed) for r in rows]
    cols = ["side", "n", "beta", "eps", "samples", "hits", "p_hat", "ratio", "flagged",
            "spread", "seed"]
    return out, cols


def cmd_center(a):
    res = tw_center_stability(a.n_grid, a.beta, a.samples, a.seed, workers=a.workers)
    out = [{"n": n, "beta": float(a.beta), "samples": a.samples, "mean": m, "se": se,
            "seed": a.seed} for n, m, se in res]
    return out, ["n", "beta", "samples", "mean", "se", "seed"]


def cmd_sample(a):
    if a.ensemble == "hermite":
        if a.kappa is not None:
            raise ParameterError("--kappa only applies to --ensemble laguerre")
        p = HermiteParams(a.n, a.beta)
        key = derive_seed(a.seed, "hermite", p.n, p.beta)
        smp = sample_hermite(p, RngStream(key, a.index))
    else:
        if a.kappa is None:
            raise ParameterError("--kappa is required for laguerre")
        p = LaguerreParams(a.n, a.kappa, a.beta)
        key = derive_seed(a.seed, "laguerre", p.n, p.beta, p.kappa)
        smp = sample_laguerre(p, RngStream(key, a.index))
    T = smp.matrix()
    if a.matrix:
        rows = [{"k": k + 1, "diag": float(T.diag[k]),
                 "offdiag": float(T.offdiag[k]) if k < T.n - 1 else None} for k in range(T.n)]
        return rows, ["k", "diag", "offdiag"]
    row = {"ensemble": a.ensemble, "n": a.n, "beta": float(a.beta),
           "kappa": None if a.kappa is None else float(a.kappa), "index": a.index, "seed": a.seed,
           "lambda_min": lambda_min(T).value, "lambda_max": lambda_max(T).value}
    return [row], ["ensemble", "n", "beta", "kappa", "index", "seed", "lambda_min", "lambda_max"]


def cmd_verify(a):
    rep = run_suite(a.suite, trials=a.trials, seed=a.seed, samples=a.samples)
    log.info("verify %s: %s in %.1fs", a.suite, "passed" if rep["passed"] else "FAILED",
             rep["seconds"])
    rows = []
    for c in rep["checks"]:
        rows.append({"suite": a.suite, "check": c["name"], "count": c["count"],
                     "max_abs_violation": max(c["max_violation"], 0.0), "tolerance": c["tolerance"],
                     "passed": c["passed"]})
        if not c["passed"]:
            log.error("check failed: %s (violation %.3g > %.3g)", c["name"], c["max_violation"],
                      c["tolerance"])
    a._verify_failed = not rep["passed"]
    return rows, ["suite", "check", "count", "max_abs_violation", "tolerance", "passed"]


# ---------------------------------------------------------------------------
# parser

def _common(p):
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED, help="64-bit base seed")
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker threads (default: ${WORKERS_ENV} or all cores)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output", "-o", default=None, help="write results here instead of stdout")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")


def _ensemble_args(p, eps=True):
    p.add_argument("--ensemble", choices=("hermite", "laguerre"), default="hermite")
    p.add_argument("--side", choices=("upper", "lower"), required=True)
    p.add_argument("--extremal", choices=("max", "min"), default="max")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--samples", type=int, required=True)


def build_parser():
    ap = _Parser(prog="betatails", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="one ensemble draw: extremal eigenvalues or the matrix")
    _common(p)
    p.add_argument("--ensemble", choices=("hermite", "laguerre"), default="hermite")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--index", type=int, default=0, help="sample index (stream id)")
    p.add_argument("--matrix", action="store_true", help="emit the tridiagonal entries")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("tail", help="Monte Carlo tail probability with Clopper-Pearson CI")
    _common(p)
    _ensemble_args(p)
    p.add_argument("--eps", type=float, nargs="+", required=True)
    p.set_defaults(func=cmd_tail)

    p = sub.add_parser("fit", help="eps sweep plus log(-log p) vs log eps fit")
    _common(p)
    _ensemble_args(p)
    p.add_argument("--eps-grid", type=_float_list, required=True)
    p.add_argument("--expected-power", type=float, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("variance", help="Var[lambda_max] across n with a log-log fit")
    _common(p)
    p.add_argument("--ensemble", choices=("hermite", "laguerre"), default="hermite")
    p.add_argument("--n-grid", type=_int_list, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--kappa-ratio", type=float, default=None)
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("lower-ratio", help="-log p_hat over the predicted exponent scale")
    _common(p)
    p.add_argument("--side", choices=("upper", "lower"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--eps-grid", type=_float_list, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.set_defaults(func=cmd_lower_ratio)

    p = sub.add_parser("center", help="mean of n^(1/6)(lambda_max - 2 sqrt n) per n")
    _common(p)
    p.add_argument("--n-grid", type=_int_list, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.set_defaults(func=cmd_center)

    p = sub.add_parser("verify", help="self-verification suites")
    _common(p)
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--samples", type=int, default=None, help="Monte Carlo size (mgf suite)")
    p.set_defaults(func=cmd_verify)
    return ap


def _config(a):
    skip = {"func", "workers", "output", "verbose", "format"}
    return {k: v for k, v in sorted(vars(a).items()) if k not in skip and not k.startswith("_")}


def run(argv=None):
    """Parse ``argv`` and execute; returns the exit code."""
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_PARAM
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if a.workers is None and os.environ.get(WORKERS_ENV):
        try:
            a.workers = int(os.environ[WORKERS_ENV])
        except ValueError:
            log.error("%s must be an integer", WORKERS_ENV)
            return EXIT_PARAM
    if a.workers is not None and a.workers < 1:
        log.error("--workers must be positive")
        return EXIT_PARAM
    set_workers(a.workers)
    try:
        rows, cols = a.func(a)
    except (ParameterError, FitError) as exc:
        log.error("%s", exc)
        return EXIT_PARAM
    text = render(rows, cols, a.format, _config(a))
    if a.output:
        with open(a.output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()
    if getattr(a, "_verify_failed", False):
        return EXIT_VERIFY
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
