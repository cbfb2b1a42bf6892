"""Self-verification suites shared by the CLI and the acceptance tests.

Each ``verify_*`` returns a dict ``{"suite", "passed", "checks"}`` where every
check records its count, worst observed violation and tolerance.
"""
import math
import time

import numpy as np

from . import boundscheck as bc
from . import forms
from .eigentri import dense_eigen_oracle, lambda_max, lambda_min
from .ensembles import HermiteParams, LaguerreParams, sample_hermite, sample_laguerre
from .randkit import RngStream, derive_seed, mean_chi

__all__ = [
    "SUITES",
    "verify_parts",
    "verify_eigen",
    "verify_forms",
    "verify_mgf",
    "verify_vectors",
    "run_suite",
    "mean_chi_bracket",
]


def _check(name, count, worst, tol, extra=None):
    d = {"name": name, "count": int(count), "max_violation": float(worst),
         "tolerance": float(tol), "passed": bool(worst <= tol)}
    if extra:
        d.update(extra)
    return d


def _suite(name, checks, t0):
    return {"suite": name, "passed": all(c["passed"] for c in checks),
            "seconds": time.perf_counter() - t0, "checks": checks}


def _streams(seed, label):
    key = derive_seed(seed, "verify", label)
    return lambda i: RngStream(key, i)


# ---------------------------------------------------------------------------

def verify_parts(trials=10_000, seed=7, n_max=100):
    """Summation-by-parts identity and the Delta_m covering bound on random input."""
    t0 = time.perf_counter()
    mk = _streams(seed, "parts")
    worst_id = 0.0
    worst_cover = -math.inf
    for i in range(trials):
        st = mk(i)
        n = 1 + int(st.uniform() * n_max)
        m = 1 + int(st.uniform() * n)
        extra = int(st.uniform() * (m + 1))
        s = st.normal(n + extra) * math.exp(2 * st.normal())
        t = st.normal(n)
        lhs, rhs = forms.sum_by_parts(s, t, m)
        worst_id = max(worst_id, abs(lhs - rhs) / (1.0 + abs(lhs)))
        # covering: for (j-1)m+1 <= k <= jm, Delta_m(k) v Delta_m(k-1) <= 2 Delta_2m((j-1)m)
        j = 1 + int(st.uniform() * max(1, n // m))
        k = (j - 1) * m + 1 + int(st.uniform() * m)
        left = max(forms.delta_m(s, m, k), forms.delta_m(s, m, k - 1))
        right = 2.0 * forms.delta_m(s, 2 * m, (j - 1) * m)
        worst_cover = max(worst_cover, left - right - 1e-12 * (1.0 + right))
    checks = [
        _check("sum_by_parts relative |lhs - rhs|", trials, worst_id, 1e-12),
        _check("delta_m covering bound", trials, max(worst_cover, 0.0), 0.0),
    ]
    return _suite("parts", checks, t0)


def _random_tridiagonal(st):
    n = 1 + int(st.uniform() * 50)
    beta = (0.5, 1.0, 2.0, 4.0)[int(st.uniform() * 4)]
    if st.uniform() < 0.5:
        return sample_hermite(HermiteParams(n, beta), st).matrix()
    kappa = n - 1 + 0.05 + st.uniform() * 3 * n
    return sample_laguerre(LaguerreParams(n, kappa, beta), st).matrix()


def verify_eigen(trials=1000, seed=7):
    """Bisection extremal eigenvalues against the dense Jacobi oracle."""
    t0 = time.perf_counter()
    mk = _streams(seed, "eigen")
    worst = 0.0
    for i in range(trials):
        T = _random_tridiagonal(mk(i))
        ev = dense_eigen_oracle(T)
        scale = 1.0 + T.norm()
        err = max(abs(lambda_max(T).value - ev[-1]), abs(lambda_min(T).value - ev[0]))
        worst = max(worst, err / scale)
    return _suite("eigen", [_check("bisection vs dense oracle / (1 + |T|)", trials, worst, 1e-9)], t0)


# ---------------------------------------------------------------------------

def _forms_energy_check(trials, mk):
    worst_hi = -math.inf
    worst_lo = -math.inf
    for i in range(trials):
        st = mk(i)
        n = 2 + int(st.uniform() * 499)
        beta = (1.0, 2.0, 4.0)[int(st.uniform() * 3)]
        v = forms.random_test_vector(n, st)
        J = forms.energy_J(v, n, beta)
        I = forms.energy_I(v, n)
        tol = 1e-12 * (abs(J) + I)
        worst_hi = max(worst_hi, (J - 8 * I - tol) / I)
        worst_lo = max(worst_lo, (I / 16 - J - tol) / I)
    return [
        _check("J <= 8 I (relative excess)", trials, max(worst_hi, 0.0), 0.0),
        _check("J >= I / 16 (relative excess)", trials, max(worst_lo, 0.0), 0.0),
    ]


def _forms_matrix_check(trials, mk):
    worst = 0.0
    worst_ray = -math.inf
    for i in range(trials):
        st = mk(i)
        n = 1 + int(st.uniform() * 60)
        beta = (1.0, 2.0, 4.0)[int(st.uniform() * 3)]
        v = st.normal(n)
        h = sample_hermite(HermiteParams(n, beta), st)
        T = h.matrix()
        ref = T.quadratic(v) - 2 * math.sqrt(n) * np.dot(v, v)
        scale = abs(ref) + np.dot(v, v) * (T.norm() + 2 * math.sqrt(n))
        worst = max(worst, abs(forms.hermite_form(h, v) - ref) / scale)
        kappa = n - 1 + 0.1 + st.uniform() * 3 * n
        lg = sample_laguerre(LaguerreParams(n, kappa, beta), st)
        M = lg.matrix()
        edge = (math.sqrt(kappa) + math.sqrt(n)) ** 2
        ref = (M.quadratic(v) - edge * np.dot(v, v)) / math.sqrt(kappa)
        scale = abs(ref) + np.dot(v, v) * (M.norm() + edge) / math.sqrt(kappa)
        worst = max(worst, abs(forms.laguerre_form(lg, v) - ref) / scale)
        if i < 50:
            top = lambda_max(T, tol=1e-13 * (1 + T.norm())).value - 2 * math.sqrt(n)
            for _ in range(200 // 50):
                u = st.normal(n)
                u /= math.sqrt(np.dot(u, u))
                worst_ray = max(worst_ray, forms.hermite_form(h, u) - top - 1e-9)
    return [
        _check("form vs matrix quadratic (relative)", trials, worst, 1e-12),
        _check("Rayleigh: H(v) <= lambda_max - 2 sqrt(n)", min(trials, 50) * 4,
               max(worst_ray, 0.0), 0.0),
    ]


def verify_forms(trials=10_000, seed=7, calibrate_trials=None):
    """Deterministic J/I inequalities, per-sample sandwiches, form/matrix agreement."""
    t0 = time.perf_counter()
    calibrate_trials = trials if calibrate_trials is None else calibrate_trials
    checks = _forms_energy_check(trials, _streams(seed, "forms-energy"))
    checks += _forms_matrix_check(max(1, trials // 20), _streams(seed, "forms-matrix"))
    # Hermite sandwich at (8, 1/16): a CalibrationError means a violation
    try:
        res = forms.calibrate_sandwich("hermite", [forms.HERMITE_SANDWICH], calibrate_trials,
                                       n_grid=tuple(range(1, 201)), seed=seed)
        ok = (res.a, res.b) == forms.HERMITE_SANDWICH
        checks.append(_check("Hermite sandwich H_8 <= H <= H_1/16", calibrate_trials,
                             0.0 if ok else 1.0, 0.0))
    except forms.CalibrationError as exc:
        checks.append(_check("Hermite sandwich H_8 <= H <= H_1/16", calibrate_trials, 1.0, 0.0,
                             {"error": str(exc)}))
    try:
        res = forms.calibrate_sandwich("laguerre", forms.DEFAULT_GRID, calibrate_trials,
                                       n_grid=tuple(range(1, 201)), seed=seed)
        checks.append(_check("Laguerre sandwich calibrated", calibrate_trials, 0.0, 0.0,
                             {"a": res.a, "b": res.b,
                              "observed_ratio_range": [res.worst_upper_ratio, res.worst_lower_ratio]}))
    except forms.CalibrationError as exc:
        checks.append(_check("Laguerre sandwich calibrated", calibrate_trials, 1.0, 0.0,
                             {"error": str(exc)}))
    return _suite("forms", checks, t0)


# ---------------------------------------------------------------------------

def mean_chi_bracket(r_grid=None):
    """Worst violation of sqrt(r - 1/2) <= mean_chi(r) <= sqrt(r) over the grid (0 when it holds)."""
    if r_grid is None:
        r_grid = np.concatenate([np.arange(1, 1001, dtype=float), np.arange(1.0, 50.0, 0.01),
                                 np.geomspace(0.5, 1e12, 5000)])
    r = np.asarray(r_grid, dtype=float)
    m = np.atleast_1d(mean_chi(r))
    lo = np.sqrt(r - 0.5)
    hi = np.sqrt(r)
    bad = np.maximum(lo - m, m - hi)
    return r.size, float(max(bad.max(), 0.0))


def verify_mgf(seed=7, mc_samples=10_000_000, zy_samples=1_000_000):
    """mean_chi bracket, chi mgf by quadrature, chi-square mgf closed form, MC bounds."""
    t0 = time.perf_counter()
    checks = []
    count, worst = mean_chi_bracket()
    checks.append(_check("sqrt(r - 1/2) <= mean_chi(r) <= sqrt(r)", count, worst, 0.0))
    rep = bc.verify_lemma8()
    checks.append(_check("chi mgf bound (quadrature)", len(rep), max(x.violation for x in rep), 1e-8))
    rep = bc.verify_lemma10()
    checks.append(_check("chi-square mgf bound (closed form)", len(rep), max(x.violation for x in rep), 1e-12))
    mk = _streams(seed, "mgf")
    mc = [bc.verify_lemma11(2, 2, 0.3, mc_samples, mk(0)),
          bc.verify_lemma11(1, 5, -0.5, mc_samples, mk(1))]
    mc += bc.verify_zy_bounds(100, 50, 2.0, 10, [-1.0, 0.5, 0.8, 1.0], zy_samples, mk(2))

    def excess(x):
        return (x.lhs - x.rhs) / x.se if x.se > 0 else (x.lhs - x.rhs)

    for label, title in (("product-mgf", "chi product"), ("Z", "Z"), ("Ztilde", "Ztilde"), ("Y", "Y")):
        sub = [x for x in mc if x.label == label]
        checks.append(_check(f"{title} mgf bound (excess in SE)", len(sub),
                             max(excess(x) for x in sub), bc.MC_SIGMAS))
    return _suite("mgf", checks, t0)


# ---------------------------------------------------------------------------

def verify_vectors():
    """Test-vector shape checks on fixed (n, eps) grids."""
    t0 = time.perf_counter()
    checks = []
    v = forms.test_vector_left_hermite(10_000, 0.01)
    s = forms.vector_stats(v)
    nl = 10_000 * 0.01
    # slack 1e-12: the triangle makes grad_sq * n eps equal 1 up to rounding
    a = s.norm2_sq / nl
    b = s.grad_sq * nl
    checks.append(_check("left Hermite norm2_sq/(n eps) in [1/20, 1/6]", 1,
                         max(1 / 20 - a, a - 1 / 6, 0.0), 0.0, {"value": a}))
    checks.append(_check("left Hermite grad_sq*(n eps) in [1, 8]", 1,
                         max(1 - b, b - 8, 0.0), 1e-12, {"value": b}))
    worst = 0.0
    cnt = 0
    for n in (10**3, 10**4, 10**5, 10**6):
        for eps in (0.3, 0.1, 0.03, 0.01):
            if n * eps ** 1.5 < 1:
                continue
            s = forms.vector_stats(forms.test_vector_right_hermite(n, eps))
            w = s.kweight * eps
            worst = max(worst, 1 / 40 - w, w - 1 / 12)
            cnt += 1
    checks.append(_check("right Hermite kweight*eps in [1/40, 1/12]", cnt, max(worst, 0.0), 0.0))
    worst = 0.0
    cnt = 0
    for n in (100, 1000, 10_000):
        for ratio in (1.0, 4.0, 16.0):
            kappa = ratio * n
            delta = math.sqrt(n / kappa)
            for eps in (delta, delta / 3, delta / 10):
                if n * eps / delta < 4:
                    continue
                s = forms.vector_stats(forms.test_vector_left_laguerre(n, kappa, eps))
                L = n * eps / delta
                a = s.norm2_sq / L
                b = s.grad_sq * L
                # Cauchy-Schwarz: floor(L) + 1 steps carry total variation >= 1 - 1/L
                low = L * (1 - 1 / L) ** 2 / (math.floor(L) + 1)
                worst = max(worst, 1 / 20 - a, a - 1 / 6, low - 1e-12 - b, b - 8)
                cnt += 1
    checks.append(_check("left Laguerre tent shape", cnt, max(worst, 0.0), 0.0))
    return _suite("vectors", checks, t0)


SUITES = {
    "parts": verify_parts,
    "eigen": verify_eigen,
    "forms": verify_forms,
    "mgf": verify_mgf,
    "vectors": verify_vectors,
}


def run_suite(name, trials=None, seed=7, samples=None):
    fn = SUITES[name]
    kw = {}
    if name in ("parts", "eigen", "forms") and trials is not None:
        kw["trials"] = trials
    if name != "vectors":
        kw["seed"] = seed
    if name == "mgf" and samples is not None:
        kw["mc_samples"] = samples
        kw["zy_samples"] = max(1, samples // 10)
    return fn(**kw)
