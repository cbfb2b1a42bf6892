"""Monte Carlo tail probabilities, variances and exponent fits.

Every sample ``i`` of a run draws from ``RngStream(key, i)``, where ``key`` is
derived from the user seed and the ensemble configuration (not from eps).  All
eps values of a sweep therefore see the same matrices, which makes ``p_hat``
exactly monotone in eps, and results do not depend on the worker count.

Tail events are decided by a single Sturm count at the threshold instead of
computing the eigenvalue first; the two agree except on a null set.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import stats

from .eigentri import bisect_extreme, sturm_count_e2
from .ensembles import ParameterError, hermite_fill, laguerre_fill
from .randkit import derive_seed, rng_init, STATE_SIZE

log = logging.getLogger(__name__)

__all__ = [
    "TailQuery",
    "TailEstimate",
    "FitReport",
    "FitError",
    "threshold",
    "clopper_pearson",
    "estimate_tail",
    "estimate_tail_sweep",
    "extremal_values",
    "fit_exponent",
    "exponent_sweep",
    "eps_window",
    "variance_scan",
    "lower_bound_ratio",
    "tw_center_stability",
    "set_workers",
]

ENSEMBLES = ("hermite", "laguerre")
SIDES = ("upper", "lower")
EXTREMALS = ("max", "min")
EASY_RATIO = 2.0
MIN_FIT_HITS = 10

_MODE_UPPER_MAX = 0
_MODE_LOWER_MAX = 1
_MODE_LOWER_MIN = 2


class FitError(ValueError):
    """Too few usable points (or degenerate abscissae) for a regression."""


def set_workers(workers):
    """Cap the numba thread pool; returns the count actually used."""
    if workers is None:
        return numba.get_num_threads()
    w = max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(w)
    return w


@dataclass(frozen=True)
class TailQuery:
    ensemble: str
    side: str
    n: int
    beta: float
    eps: float
    samples: int
    seed: int = 20100101
    extremal: str = "max"
    kappa: float = None

    def __post_init__(self):
        if self.ensemble not in ENSEMBLES:
            raise ParameterError(f"ensemble must be one of {ENSEMBLES}")
        if self.side not in SIDES:
            raise ParameterError(f"side must be one of {SIDES}")
        if self.extremal not in EXTREMALS:
            raise ParameterError(f"extremal must be one of {EXTREMALS}")
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError("n must be a positive integer")
        if not self.beta > 0:
            raise ParameterError("beta must be positive")
        if not (0 < self.eps <= 1):
            raise ParameterError(f"eps must lie in (0, 1], got {self.eps}")
        if int(self.samples) != self.samples or self.samples < 1:
            raise ParameterError("samples must be a positive integer")
        if self.ensemble == "laguerre":
            if self.kappa is None or not self.kappa > self.n - 1:
                raise ParameterError("laguerre queries need kappa > n - 1")
        elif self.kappa is not None:
            raise ParameterError("kappa only applies to laguerre queries")
        if self.extremal == "min":
            if self.ensemble != "laguerre" or self.side != "lower":
                raise ParameterError("extremal=min is only defined for laguerre lower deviations")
            if self.kappa < self.n + 1:
                raise ParameterError("lambda_min queries need kappa >= n + 1")
            if not self.kappa > EASY_RATIO * self.n:
                hi = min_eps_window(self.n, self.kappa)
                if self.eps > hi:
                    raise ParameterError(
                        f"eps={self.eps} outside the lambda_min window (0, {hi:.3g}]; "
                        f"use kappa > {EASY_RATIO} n for the full range")

    def config_key(self, seed=None):
        """Stream key: depends on the ensemble configuration, never on eps."""
        s = self.seed if seed is None else seed
        if self.ensemble == "hermite":
            return derive_seed(s, "hermite", self.n, float(self.beta))
        return derive_seed(s, "laguerre", self.n, float(self.beta), float(self.kappa))


def min_eps_window(n, kappa):
    """Upper end of the eps range for which the lambda_min bound is stated."""
    alpha = 1.0 - math.sqrt(n / kappa)
    return math.sqrt(n / kappa) * min(alpha ** 14, alpha ** 2 * n ** -0.4)


def laguerre_small_deviation_limit(n, kappa):
    return math.sqrt(n / kappa)


def threshold(q):
    """Eigenvalue threshold of the query's tail event."""
    if q.ensemble == "hermite":
        edge = 2.0 * math.sqrt(q.n)
    elif q.extremal == "max":
        edge = (math.sqrt(q.kappa) + math.sqrt(q.n)) ** 2
    else:
        edge = (math.sqrt(q.kappa) - math.sqrt(q.n)) ** 2
    return edge * (1.0 + q.eps) if q.side == "upper" else edge * (1.0 - q.eps)


def _mode(q):
    if q.extremal == "min":
        return _MODE_LOWER_MIN
    return _MODE_UPPER_MAX if q.side == "upper" else _MODE_LOWER_MAX


@dataclass(frozen=True)
class TailEstimate:
    hits: int
    samples: int
    p_hat: float
    ci_low: float
    ci_high: float


def clopper_pearson(hits, samples, level=0.95):
    """Exact two-sided binomial interval.

    With zero hits the upper end is ``1 - ((1 - level) / 2)**(1/samples)``,
    about 3.7/samples; the one-sided rule of three (3/samples) would let the
    coverage drop below ``level`` for p near 3/samples.
    """
    a = (1.0 - level) / 2
    if hits == 0:
        return 0.0, float(-math.expm1(math.log(a) / samples))
    if hits == samples:
        return float(math.exp(math.log(a) / samples)), 1.0
    lo = stats.beta.ppf(a, hits, samples - hits + 1)
    hi = stats.beta.ppf(1 - a, hits + 1, samples - hits)
    return float(lo), float(hi)


def make_estimate(hits, samples):
    hits, samples = int(hits), int(samples)
    p = hits / samples
    lo, hi = clopper_pearson(hits, samples)
    return TailEstimate(hits, samples, p, min(lo, p), max(hi, p))


@numba.njit(cache=True, parallel=True)
def _extreme_kernel(is_laguerre, n, beta, kappa, key, n_samples, want_max, rel_tol, out):
    for i in numba.prange(n_samples):
        st = np.empty(STATE_SIZE, dtype=np.uint64)
        rng_init(st, np.uint64(key), np.uint64(i))
        d = np.empty(n)
        e2 = np.empty(max(n - 1, 1))
        if is_laguerre:
            chi = np.empty(n)
            chit = np.empty(max(n - 1, 1))
            laguerre_fill(st, n, kappa, beta, d, e2, chi, chit)
        else:
            hermite_fill(st, n, beta, d, e2)
        scale = 0.0
        for k in range(n):
            scale = max(scale, abs(d[k]))
        tol = rel_tol * max(1.0, scale)
        v, _it, _w = bisect_extreme(d, e2, want_max, tol, 1e-280 * max(1.0, scale))
        out[i] = v


_CHUNK = 1 << 17


def _run_flags(q, thresholds, workers=None):
    set_workers(workers)
    th = np.ascontiguousarray(thresholds, dtype=float)
    key = q.config_key()
    hits = np.zeros(th.size, dtype=np.int64)
    lag = q.ensemble == "laguerre"
    kappa = float(q.kappa) if lag else 0.0
    done = 0
    # chunks keep memory flat; chunk boundaries do not affect any draw
    while done < q.samples:
        m = min(_CHUNK, q.samples - done)
        flags = np.empty((m, th.size), dtype=np.uint8)
        _tail_kernel(lag, q.n, float(q.beta), kappa, np.uint64(key), done, m, th, _mode(q), flags)
        hits += flags.sum(axis=0, dtype=np.int64)
        done += m
    return hits


@numba.njit(cache=True, parallel=True)
def _tail_kernel(is_laguerre, n, beta, kappa, key, start, n_samples, thresholds, mode, flags):
    m = thresholds.size
    for ii in numba.prange(n_samples):
        i = start + ii
        st = np.empty(STATE_SIZE, dtype=np.uint64)
        rng_init(st, np.uint64(key), np.uint64(i))
        d = np.empty(n)
        e2 = np.empty(max(n - 1, 1))
        if is_laguerre:
            chi = np.empty(n)
            chit = np.empty(max(n - 1, 1))
            laguerre_fill(st, n, kappa, beta, d, e2, chi, chit)
        else:
            hermite_fill(st, n, beta, d, e2)
        for j in range(m):
            x = thresholds[j]
            c = sturm_count_e2(d, e2, x, 1e-280 * (1.0 + abs(x)))
            if mode == 0:
                flags[ii, j] = 1 if c < n else 0
            elif mode == 1:
                flags[ii, j] = 1 if c == n else 0
            else:
                flags[ii, j] = 1 if c >= 1 else 0


def estimate_tail(q, workers=None):
    """Monte Carlo estimate of the query's tail probability with a 95% CI."""
    return estimate_tail_sweep(q, [q.eps], workers=workers)[0]


def estimate_tail_sweep(q, eps_grid, workers=None):
    """Tail estimates for several eps values on one shared set of samples.

    ``q.eps`` is ignored; each grid value is validated as its own query.
    """
    queries = [replace(q, eps=float(e)) for e in eps_grid]
    th = [threshold(x) for x in queries]
    hits = _run_flags(q, th, workers)
    return [make_estimate(h, q.samples) for h in hits]


def extremal_values(ensemble, n, beta, samples, seed, kappa=None, which="max",
                    rel_tol=1e-12, workers=None):
    """Per-sample extremal eigenvalues (bisection), in sample-index order."""
    if ensemble not in ENSEMBLES:
        raise ParameterError(f"ensemble must be one of {ENSEMBLES}")
    lag = ensemble == "laguerre"
    if lag:
        if kappa is None or not kappa > n - 1:
            raise ParameterError("laguerre needs kappa > n - 1")
        key = derive_seed(seed, "laguerre", n, float(beta), float(kappa))
    else:
        key = derive_seed(seed, "hermite", n, float(beta))
    set_workers(workers)
    out = np.empty(samples)
    _extreme_kernel(lag, n, float(beta), float(kappa) if lag else 0.0, np.uint64(key), samples,
                    which == "max", rel_tol, out)
    return out


@dataclass(frozen=True)
class FitReport:
    slope: float
    intercept: float
    residual_rms: float
    points_used: int
    points_excluded: int
    expected: float = None
    x: tuple = field(default=(), repr=False)
    y: tuple = field(default=(), repr=False)


def _linfit(x, y, expected=None, excluded=0):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise FitError(f"need at least 3 usable points, got {x.size}")
    if np.ptp(x) == 0:
        raise FitError("abscissae are all equal")
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    return FitReport(float(slope), float(icpt), float(np.sqrt(np.mean(resid ** 2))),
                     int(x.size), int(excluded), expected, tuple(x), tuple(y))


def fit_exponent(estimates, expected_power=None, min_hits=MIN_FIT_HITS):
    """Regress log(-log p_hat) on log eps.

    ``estimates`` holds ``(eps, TailEstimate)`` pairs.  Points with fewer than
    ``min_hits`` hits (including zero-hit points) or with ``p_hat == 1`` are
    excluded and counted.
    """
    xs, ys = [], []
    excluded = 0
    for eps, est in estimates:
        if est.hits < min_hits or est.p_hat >= 1.0:
            excluded += 1
            continue
        xs.append(math.log(eps))
        ys.append(math.log(-math.log(est.p_hat)))
    return _linfit(xs, ys, expected_power, excluded)


def eps_window(q):
    """Largest eps for which the query sits in its small-deviation regime.

    Laguerre lambda_max: sqrt(n / kappa).  Laguerre lambda_min: the window
    enforced by TailQuery (all of (0, 1] in the easy regime).  Hermite: 1.
    """
    if q.ensemble == "hermite":
        return 1.0
    if q.extremal == "min":
        return 1.0 if q.kappa > EASY_RATIO * q.n else min_eps_window(q.n, q.kappa)
    return min(1.0, laguerre_small_deviation_limit(q.n, q.kappa))


def exponent_sweep(q, eps_grid, expected_power=None, workers=None, min_hits=MIN_FIT_HITS):
    """Tail sweep restricted to the query's eps window, plus the exponent fit.

    Returns ``(pairs, fit, outside)`` where ``pairs`` lists ``(eps, TailEstimate)``
    for the grid points inside the window, ``outside`` the dropped eps values,
    and ``fit`` is the FitReport (or the FitError raised for too few points).
    """
    hi = eps_window(q)
    inside = [float(e) for e in eps_grid if e <= hi]
    outside = [float(e) for e in eps_grid if e > hi]
    if outside:
        log.info("dropping eps %s outside the small-deviation window (0, %.4g]", outside, hi)
    if not inside:
        raise ParameterError(f"no eps in the grid lies within (0, {hi:.4g}]")
    ests = estimate_tail_sweep(q, inside, workers=workers)
    pairs = list(zip(inside, ests))
    try:
        fit = fit_exponent(pairs, expected_power, min_hits=min_hits)
    except FitError as exc:
        fit = exc
    return pairs, fit, outside


def _fsum_var(values):
    m = math.fsum(values) / len(values)
    dev = values - m
    return m, math.fsum(dev * dev) / (len(values) - 1)


def variance_scan(n_grid, beta, samples, seed, ensemble="hermite", kappa_ratio=None,
                  workers=None):
    """Var[lambda_max] per n and a log-log fit against n.

    For Laguerre, ``kappa = kappa_ratio * n`` and the fit is of ``Var/kappa``,
    whose predicted slope is -1/3 like the Hermite variance.

    Returns ``(rows, FitReport)`` with rows ``(n, kappa, mean, var)``.
    """
    n_grid = [int(n) for n in n_grid]
    if len(n_grid) < 3:
        raise FitError("variance scan needs at least 3 values of n")
    if any(b < a for a, b in zip(n_grid, n_grid[1:])):
        raise ParameterError("n_grid must be ascending")
    if samples < 100:
        raise ParameterError("variance scan needs samples >= 100")
    if ensemble == "laguerre" and not (kappa_ratio and kappa_ratio > 0):
        raise ParameterError("laguerre variance scan needs kappa_ratio")
    rows = []
    for n in n_grid:
        kappa = kappa_ratio * n if ensemble == "laguerre" else None
        if kappa is not None and not kappa > n - 1:
            raise ParameterError("kappa_ratio * n must exceed n - 1")
        vals = extremal_values(ensemble, n, beta, samples, seed, kappa=kappa, workers=workers)
        mean, var = _fsum_var(vals)
        rows.append((n, kappa, mean, var))
        log.info("variance n=%d mean=%.6g var=%.6g", n, mean, var)
    x = [math.log(r[0]) for r in rows]
    if ensemble == "laguerre":
        y = [math.log(r[3] / r[1]) for r in rows]
    else:
        y = [math.log(r[3]) for r in rows]
    return rows, _linfit(x, y, -1.0 / 3.0)


def lower_bound_ratio(side, n, beta, eps_grid, samples, seed, workers=None,
                      min_hits=MIN_FIT_HITS):
    """-log p_hat divided by the predicted exponent scale, per eps.

    Right tail: ``beta n eps^(3/2)``; left tail: ``beta n^2 eps^3``.  Returns
    dicts with keys ``eps, hits, p_hat, ratio, flagged``; points with fewer
    than ``min_hits`` hits are flagged and carry ``ratio=None``.
    """
    q = TailQuery("hermite", side, n, beta, eps_grid[0], samples, seed)
    ests = estimate_tail_sweep(q, eps_grid, workers=workers)
    out = []
    for eps, est in zip(eps_grid, ests):
        scale = beta * n * eps ** 1.5 if side == "upper" else beta * n * n * eps ** 3
        ok = est.hits >= min_hits and est.p_hat < 1.0
        out.append({
            "eps": float(eps), "hits": est.hits, "p_hat": est.p_hat,
            "ratio": -math.log(est.p_hat) / scale if ok else None,
            "flagged": not ok,
        })
    return out


def ratio_spread(rows):
    """max/min of the unflagged ratios (None when fewer than two)."""
    r = [x["ratio"] for x in rows if not x["flagged"]]
    if len(r) < 2:
        return None
    return max(r) / min(r)


def tw_center_stability(n_grid, beta, samples, seed, workers=None):
    """Mean and standard error of n^(1/6) (lambda_max - 2 sqrt(n)) per n."""
    if len(n_grid) < 2:
        raise ParameterError("need at least two values of n")
    out = []
    for n in n_grid:
        vals = extremal_values("hermite", int(n), beta, samples, seed, workers=workers)
        z = n ** (1.0 / 6.0) * (vals - 2.0 * math.sqrt(n))
        mean, var = _fsum_var(z)
        out.append((int(n), mean, math.sqrt(var / samples)))
    return out
