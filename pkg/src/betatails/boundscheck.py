"""Checks of the chi moment-generating-function bounds.

Three methods: closed forms, adaptive quadrature against the chi density,
and Monte Carlo with a one-sided 4 standard error margin (the bounds are true
inequalities, so a miss beyond 4 SE points at a bug rather than at noise).
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .ensembles import ParameterError, laguerre_chi_params
from .randkit import RngStream, chi_moment, log_gamma, mean_chi

__all__ = [
    "BoundReport",
    "MC_SIGMAS",
    "chi_mgf_quadrature",
    "chi_mgf_abs_gaussian",
    "verify_lemma8",
    "chi_square_mgf",
    "verify_lemma10",
    "verify_lemma11",
    "lemma11_rhs",
    "verify_zy_bounds",
    "u_moments",
    "u_subgaussian_profile",
    "sigma_envelope",
    "DEFAULT_LEMMA8_GRID",
    "DEFAULT_LEMMA10_GRID",
]

MC_SIGMAS = 4.0
_LAMBDA_GUARD = 50.0


@dataclass(frozen=True)
class BoundReport:
    parameter_point: dict
    lhs: float
    rhs: float
    method: str
    se: float = 0.0
    tolerance: float = 0.0
    label: str = ""
    violation: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "violation", self.lhs - self.rhs)
        if self.method not in ("quadrature", "closed-form", "monte-carlo"):
            raise ValueError(f"unknown method {self.method}")
        if self.method != "monte-carlo" and self.se != 0:
            raise ValueError("se is only meaningful for monte-carlo reports")

    @property
    def passed(self):
        if self.method == "monte-carlo":
            return self.lhs <= self.rhs + MC_SIGMAS * self.se
        return self.violation <= self.tolerance


# ---------------------------------------------------------------------------
# chi mgf: E exp(lambda chi_r) <= exp(lambda E chi_r + lambda^2 / 2)

def chi_mgf_quadrature(r, lam, log=False):
    """E[exp(lam * chi_r)] by adaptive quadrature of the chi density.

    The domain is cut at ``mean_chi(r) + 12 + 2|lam|``; past it the tilted
    density sits more than 12 units beyond its mode in a Gaussian-type tail,
    so the dropped mass is below 1e-30 relative.  With ``log=True`` the
    natural log is returned, which stays finite for large ``lam``.
    """
    r = float(r)
    lam = float(lam)
    if not r >= 1:
        raise ParameterError(f"r must be >= 1, got {r}")
    if abs(lam) > _LAMBDA_GUARD:
        raise ParameterError(f"|lambda| > {_LAMBDA_GUARD}: integrand too peaked to integrate reliably")
    log_c = -((r / 2 - 1) * math.log(2.0) + log_gamma(r / 2))
    # mode of x^{r-1} exp(-x^2/2 + lam x)
    mode = 0.5 * (lam + math.sqrt(lam * lam + 4 * (r - 1)))
    top = float(mean_chi(r)) + 12.0 + 2.0 * abs(lam)

    def log_f(x):
        return (r - 1) * math.log(x) - 0.5 * x * x + lam * x

    peak = log_f(mode) if mode > 0 else 0.0

    def f(x):
        if x <= 0.0:
            return math.exp(-peak) if r == 1 else 0.0
        return math.exp(log_f(x) - peak)

    pts = [p for p in (mode - 3, mode, mode + 3) if 0 < p < top]
    val, _ = integrate.quad(f, 0.0, top, points=pts or None, epsabs=0.0, epsrel=1e-13, limit=400)
    out = log_c + peak + math.log(val)
    return out if log else _exp(out)


def chi_mgf_abs_gaussian(lam):
    """Closed form of E exp(lam |g|) = 2 exp(lam^2 / 2) Phi(lam), the r = 1 case."""
    return 2.0 * math.exp(0.5 * lam * lam) * special.ndtr(lam)


DEFAULT_LEMMA8_GRID = ((1.0, 2.0, 5.0, 20.0), tuple(np.linspace(-5.0, 5.0, 41)))


def verify_lemma8(r_grid=DEFAULT_LEMMA8_GRID[0], lambda_grid=DEFAULT_LEMMA8_GRID[1], tol=1e-8):
    out = []
    for r in r_grid:
        if not r >= 1:
            raise ParameterError(f"r must be >= 1, got {r}")
        m = float(mean_chi(r))
        for lam in lambda_grid:
            lam = float(lam)
            lhs = chi_mgf_quadrature(r, lam)
            rhs = math.exp(lam * m + 0.5 * lam * lam)
            out.append(BoundReport({"r": float(r), "lambda": lam}, lhs, rhs, "quadrature",
                                   tolerance=tol, label="chi-mgf"))
    return out


# ---------------------------------------------------------------------------
# chi-square mgf: E exp(lambda chi_r^2) = (1 - 2 lambda)^{-r/2} <= exp(r (lambda + 2 lambda^2))

def chi_square_mgf(r, lam):
    """(1 - 2 lam)^(-r/2), the mgf of chi_r^2.

    >>> chi_square_mgf(2, 0.25)
    2.0
    """
    if not r > 0:
        raise ParameterError("r must be positive")
    if not lam < 0.5:
        raise ParameterError(f"mgf of chi^2 diverges for lambda >= 1/2, got {lam}")
    return (1.0 - 2.0 * lam) ** (-0.5 * r)


DEFAULT_LEMMA10_GRID = ((0.5, 1.0, 2.0, 10.0, 100.0), tuple(np.linspace(-10.0, 0.25, 40)))


def verify_lemma10(r_grid=DEFAULT_LEMMA10_GRID[0], lambda_grid=DEFAULT_LEMMA10_GRID[1], tol=1e-12):
    out = []
    for r in r_grid:
        for lam in lambda_grid:
            lam = float(lam)
            if lam > 0.25:
                raise ParameterError(f"lambda must be <= 1/4, got {lam}")
            lhs = -0.5 * r * math.log1p(-2.0 * lam)
            rhs = r * (lam + 2.0 * lam * lam)
            out.append(BoundReport({"r": float(r), "lambda": lam}, _exp(lhs), _exp(rhs),
                                   "closed-form", tolerance=tol, label="chi2-mgf"))
    return out


def _exp(x):
    return math.exp(x) if x < 709.0 else math.inf


# ---------------------------------------------------------------------------
# Monte Carlo helpers

def _mc_mean(x):
    n = x.size
    mean = math.fsum(x) / n
    var = math.fsum((x - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _stream(stream):
    return stream if stream is not None else RngStream(0, 0)


def lemma11_rhs(r1, r2, lam):
    m1 = float(mean_chi(r1))
    m2 = float(mean_chi(r2))
    l2 = lam * lam
    return (1 - l2) ** -0.5 * math.exp(l2 * (r1 + r2 + 2 * lam * m1 * m2) / (2 * (1 - l2)))


def verify_lemma11(r1, r2, lam, samples=10_000_000, stream=None, chunk=1_000_000):
    """MC check of the product-chi mgf bound over ``samples`` independent pairs."""
    if not abs(lam) < 1:
        raise ParameterError(f"|lambda| must be < 1, got {lam}")
    if not (r1 >= 1 and r2 >= 1):
        raise ParameterError("chi parameters must be >= 1")
    stream = _stream(stream)
    rhs = lemma11_rhs(r1, r2, lam)
    point = {"r1": float(r1), "r2": float(r2), "lambda": float(lam)}
    if lam == 0:
        return BoundReport(point, 1.0, rhs, "monte-carlo", se=0.0, label="product-mgf")
    mm = float(mean_chi(r1)) * float(mean_chi(r2))
    parts = []
    left = samples
    while left > 0:
        k = min(chunk, left)
        x = stream.chi(r1, k)
        y = stream.chi(r2, k)
        parts.append(np.exp(lam * (x * y - mm)))
        left -= k
    mean, se = _mc_mean(np.concatenate(parts))
    return BoundReport(point, mean, rhs, "monte-carlo", se=se, label="product-mgf")


def verify_zy_bounds(kappa, n, beta, k, lambda_grid, samples=1_000_000, stream=None):
    """MC mgf of Z_k, Ztilde_k against exp(2 lam^2) and of Y_k against 2 exp(12 lam^2)."""
    if not (1 <= k <= n):
        raise ParameterError(f"k must be in [1, n], got {k}")
    if not kappa > n - 1:
        raise ParameterError("kappa must exceed n - 1")
    scale = math.sqrt(beta * kappa)
    for lam in lambda_grid:
        if lam > scale / 4 or abs(lam) > scale / (2 * math.sqrt(2)):
            raise ParameterError(f"lambda={lam} outside the validity range for kappa={kappa}, beta={beta}")
    stream = _stream(stream)
    a = beta * (kappa - k + 1)
    chi = stream.chi(a, samples)
    z = (chi * chi - a) / scale
    cols = [("Z", z, 2.0, 1.0)]
    if k >= 2:
        at = beta * (n - k + 1)
        ct = stream.chi(at, samples)
        cols.append(("Ztilde", (ct * ct - at) / scale, 2.0, 1.0))
    if k <= n - 1:
        b = beta * (n - k)
        ch = stream.chi(b, samples)
        y = (chi * ch - float(mean_chi(a)) * float(mean_chi(b))) / scale
        cols.append(("Y", y, 12.0, 2.0))
    out = []
    for lam in lambda_grid:
        lam = float(lam)
        for name, x, c, pref in cols:
            point = {"kappa": float(kappa), "n": int(n), "beta": float(beta), "k": int(k),
                     "lambda": lam, "variable": name}
            rhs = pref * math.exp(c * lam * lam)
            if lam == 0:
                out.append(BoundReport(point, 1.0, rhs, "monte-carlo", label=name))
                continue
            mean, se = _mc_mean(np.exp(lam * x))
            out.append(BoundReport(point, mean, rhs, "monte-carlo", se=se, label=name))
    return out


# ---------------------------------------------------------------------------
# U_k = [(chi - chitilde)^2 - E(chi - chitilde)^2] / sqrt(beta kappa)

def _u_params(kappa, n, beta, k):
    a = beta * (kappa - k + 1)
    b = beta * (n - k)
    return a, b


def u_moments(kappa, n, beta, k):
    """Exact (mean of (chi - chitilde)^2, Var U_k, mean-gap sigma_k^2).

    The variance comes from chi moments; sigma_k^2 is (E chi - E chitilde)^2 / (beta kappa).
    """
    a, b = _u_params(kappa, n, beta, k)
    ex = [1.0] + [float(chi_moment(a, p)) for p in (1, 2, 3, 4)]
    if b > 0:
        ey = [1.0] + [float(chi_moment(b, p)) for p in (1, 2, 3, 4)]
    else:
        ey = [1.0, 0.0, 0.0, 0.0, 0.0]
    mean_w = ex[2] + ey[2] - 2 * ex[1] * ey[1]
    var_a = ex[4] - ex[2] ** 2
    var_b = ey[4] - ey[2] ** 2
    var_c = ex[2] * ey[2] - (ex[1] * ey[1]) ** 2
    cov_ac = ex[3] * ey[1] - ex[2] * ex[1] * ey[1]
    cov_bc = ey[3] * ex[1] - ey[2] * ex[1] * ey[1]
    var_w = var_a + var_b + 4 * var_c - 4 * cov_ac - 4 * cov_bc
    s = beta * kappa
    return mean_w, var_w / s, (ex[1] - ey[1]) ** 2 / s


def _sample_u(kappa, n, beta, k, samples, stream):
    a, b = _u_params(kappa, n, beta, k)
    x = stream.chi(a, samples)
    y = stream.chi(b, samples) if b > 0 else np.zeros(samples)
    mean_w, _, _ = u_moments(kappa, n, beta, k)
    return ((x - y) ** 2 - mean_w) / math.sqrt(beta * kappa)


def u_subgaussian_profile(kappa, n, beta, k, lambda_grid, samples=200_000, stream=None,
                          max_fraction=0.25):
    """Empirical log E exp(lam (U - mean U)) / lam^2 along ``lambda_grid``.

    Rows are dicts with lambda, ratio, its delta-method SE, and the empirical
    and exact Var(U_k).  |lambda| is capped at ``max_fraction * sqrt(beta kappa)``.
    """
    if not (1 <= k <= n):
        raise ParameterError(f"k must be in [1, n], got {k}")
    cap = max_fraction * math.sqrt(beta * kappa)
    for lam in lambda_grid:
        if abs(lam) > cap or lam == 0:
            raise ParameterError(f"lambda must be nonzero with |lambda| <= {cap:.4g}")
    stream = _stream(stream)
    u = _sample_u(kappa, n, beta, k, samples, stream)
    ubar = math.fsum(u) / samples
    uc = u - ubar
    var_emp = math.fsum(uc * uc) / (samples - 1)
    var_exact = u_moments(kappa, n, beta, k)[1]
    rows = []
    for lam in lambda_grid:
        lam = float(lam)
        mean, se = _mc_mean(np.exp(lam * uc))
        lm = math.log(mean)
        rows.append({"lambda": lam, "ratio": lm / (lam * lam), "se": se / mean / (lam * lam),
                     "var_emp": var_emp, "var_exact": var_exact})
    return rows


def sigma_envelope(n_grid=(20, 50, 100, 200, 400), kappa_ratios=(1.5, 2.0, 4.0, 16.0),
                   beta_grid=(1.0, 2.0, 4.0), kappa_offsets=(1.0, 2.0)):
    """Observed envelopes over k <= n/2 of sigma_k^2 / alpha^2, Var(U_k) / alpha^2
    and of min_k lambda_k / sqrt(n).

    Returns a list of dicts, one per (n, kappa, beta); ``kappa`` runs over
    ``ratio * n`` and ``n + offset``.
    """
    from .forms import laguerre_coefficients
    rows = []
    for n in n_grid:
        kappas = [r * n for r in kappa_ratios] + [n + o for o in kappa_offsets]
        for kappa in kappas:
            alpha = 1 - math.sqrt(n / kappa)
            for beta in beta_grid:
                ks = range(1, n // 2 + 1)
                mom = [u_moments(kappa, n, beta, k) for k in ks]
                lam = laguerre_coefficients(n, float(kappa), float(beta))[2][: n // 2]
                rows.append({
                    "n": n, "kappa": float(kappa), "beta": float(beta), "alpha": alpha,
                    "sigma_ratio": max(m[2] for m in mom) / alpha ** 2,
                    "var_ratio": max(m[1] for m in mom) / alpha ** 2,
                    "lambda_min_ratio": float(lam.min()) / math.sqrt(n),
                })
    return rows
