"""Quadratic forms of the tridiagonal models, their centered variants and test vectors.

Conventions: vectors ``v`` are 0-based arrays of length ``n`` standing for
``v_1..v_n``, with the implicit boundary values ``v_0 = v_{n+1} = 0``.  Every
chi mean is computed exactly with :func:`mean_chi`, never by simulation.

The energy of a vector is ``sqrt(n) * grad_sq + kweight / sqrt(n)``; the
centered forms ``*_form_c`` subtract ``c`` times it.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ensembles import (
    HermiteParams,
    LaguerreParams,
    ParameterError,
    hermite_chi_params,
    laguerre_chi_params,
    laguerre_chitilde_params,
    sample_hermite,
    sample_laguerre,
)
from .randkit import RngStream, derive_seed, mean_chi

__all__ = [
    "VectorStats",
    "vector_stats",
    "energy",
    "hermite_form",
    "hermite_form_c",
    "energy_I",
    "energy_J",
    "laguerre_form",
    "laguerre_noise",
    "laguerre_form_c",
    "laguerre_coefficients",
    "u_noise",
    "laguerre_form_prime",
    "laguerre_prime_noise",
    "laguerre_prime_noise_grouped",
    "sum_by_parts",
    "delta_m",
    "test_vector_left_hermite",
    "test_vector_right_hermite",
    "test_vector_left_laguerre",
    "random_test_vector",
    "calibrate_sandwich",
    "CalibrationError",
    "CalibrationResult",
    "HERMITE_SANDWICH",
]

HERMITE_SANDWICH = (8.0, 1.0 / 16.0)


class CalibrationError(RuntimeError):
    """No candidate constant satisfied the sandwich on every trial."""


@dataclass(frozen=True)
class VectorStats:
    norm2_sq: float
    norm4_4: float
    grad_sq: float
    kweight: float


def _as_vec(v, n=None):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("v must be a nonempty 1-d array")
    if n is not None and v.size != n:
        raise ValueError(f"dimension mismatch: len(v)={v.size}, n={n}")
    return v


def _grad_sq(v):
    # sum_{k=0}^{n} (v_{k+1} - v_k)^2 with zero boundary values
    return float(np.sum(np.diff(v) ** 2) + v[0] ** 2 + v[-1] ** 2)


def _kweight(v):
    return float(np.dot(np.arange(1, v.size + 1), v * v))


def vector_stats(v):
    """The four shorthand sums of a vector (boundary convention v_0 = v_{n+1} = 0).

    >>> vector_stats([1.0])
    VectorStats(norm2_sq=1.0, norm4_4=1.0, grad_sq=2.0, kweight=1.0)
    """
    v = _as_vec(v)
    v2 = v * v
    return VectorStats(float(v2.sum()), float(np.dot(v2, v2)), _grad_sq(v), _kweight(v))


def energy(v):
    """sqrt(n) * grad_sq + kweight / sqrt(n)."""
    v = _as_vec(v)
    rn = math.sqrt(v.size)
    return rn * _grad_sq(v) + _kweight(v) / rn


# ---------------------------------------------------------------------------
# Hermite

@lru_cache(maxsize=256)
def _hermite_means(n, beta):
    m = mean_chi(hermite_chi_params(n, beta)) if n > 1 else np.zeros(0)
    m = np.atleast_1d(m)
    m.setflags(write=False)
    return m


def hermite_form(s, v):
    """H(v) = v^T (H_beta - 2 sqrt(n) I) v, from the raw draws."""
    n, beta = s.n, s.beta
    v = _as_vec(v, n)
    rb = math.sqrt(beta)
    v2 = v * v
    return float(np.dot(s.g, v2) / rb + 2.0 * np.dot(s.chi, v[:-1] * v[1:]) / rb
                 - 2.0 * math.sqrt(n) * v2.sum())


def hermite_form_c(s, v, c):
    """Centered form with off-diagonal noise chi - E chi and energy weight ``c``."""
    if not c > 0:
        raise ValueError("c must be positive")
    n, beta = s.n, s.beta
    v = _as_vec(v, n)
    rb = math.sqrt(beta)
    centered = s.chi - _hermite_means(n, beta)
    noise = np.dot(s.g, v * v) / rb + 2.0 * np.dot(centered, v[:-1] * v[1:]) / rb
    return float(noise - c * energy(v))


def energy_I(v, n):
    """sqrt(n) sum_{k<n} (v_{k+1}-v_k)^2 + n^{-1/2} sum k v_k^2 (no boundary terms)."""
    v = _as_vec(v, n)
    rn = math.sqrt(n)
    return float(rn * np.sum(np.diff(v) ** 2) + _kweight(v) / rn)


def energy_J(v, n, beta):
    """Deterministic part of H(v) minus its boundary terms, sign reversed."""
    v = _as_vec(v, n)
    if n == 1:
        return 0.0
    m = _hermite_means(n, beta) / math.sqrt(beta)
    rn = math.sqrt(n)
    dv = np.diff(v)
    return float(np.dot(m, dv * dv) + np.dot(rn - m, v[:-1] ** 2 + v[1:] ** 2))


# ---------------------------------------------------------------------------
# Laguerre

@lru_cache(maxsize=256)
def laguerre_coefficients(n, kappa, beta):
    """(E chi, E chitilde, lambda) for k = 1..n and 1..n-1.

    ``lambda_k = E[chi_{beta(kappa-k+1)}] E[chi_{beta(n-k)}] / (beta sqrt(kappa))``.
    """
    mc = np.atleast_1d(mean_chi(laguerre_chi_params(n, kappa, beta)))
    mt = np.atleast_1d(mean_chi(laguerre_chitilde_params(n, beta))) if n > 1 else np.zeros(0)
    lam = mc[:-1] * mt / (beta * math.sqrt(kappa))
    for a in (mc, mt, lam):
        a.setflags(write=False)
    return mc, mt, lam


def laguerre_form(s, v):
    """L(v) = kappa^{-1/2} v^T (L_beta - (sqrt(kappa) + sqrt(n))^2 I) v."""
    n, kappa, beta = s.n, s.kappa, s.beta
    v = _as_vec(v, n)
    v2 = v * v
    quad = (np.dot(s.chi * s.chi, v2) + np.dot(s.chitilde * s.chitilde, v2[1:])
            + 2.0 * np.dot(s.chi[:-1] * s.chitilde, v[:-1] * v[1:])) / beta
    edge = (math.sqrt(kappa) + math.sqrt(n)) ** 2
    return float((quad - edge * v2.sum()) / math.sqrt(kappa))


def laguerre_noise(s):
    """Centered noise (Z, Ztilde, Y).

    ``Z[k-1]`` for k = 1..n; ``Ztilde[k-1]`` for k = 2..n with ``Ztilde[0] = 0``
    (it never enters a form); ``Y[k-1]`` for k = 1..n-1.
    """
    n, kappa, beta = s.n, s.kappa, s.beta
    scale = 1.0 / math.sqrt(beta * kappa)
    mc, mt, _ = laguerre_coefficients(n, kappa, beta)
    z = (s.chi ** 2 - laguerre_chi_params(n, kappa, beta)) * scale
    zt = np.zeros(n)
    # Ztilde_k uses chitilde_{beta(n-k+1)} = chitilde[k-2]
    zt[1:] = (s.chitilde ** 2 - laguerre_chitilde_params(n, beta)) * scale
    y = (s.chi[:-1] * s.chitilde - mc[:-1] * mt) * scale
    return z, zt, y


def _laguerre_noise_term(s, v):
    z, zt, y = laguerre_noise(s)
    v2 = v * v
    return (np.dot(z, v2) + np.dot(zt, v2) + 2.0 * np.dot(y, v[:-1] * v[1:])) / math.sqrt(s.beta)


def laguerre_form_c(s, v, c):
    """Centered Laguerre form with noise (Z, Ztilde, Y) and energy weight ``c``."""
    if not c > 0:
        raise ValueError("c must be positive")
    v = _as_vec(v, s.n)
    return float(_laguerre_noise_term(s, v) - c * energy(v))


def u_noise(s):
    """U_k = [(chi_k - chitilde_{beta(n-k)})^2 - E(...)^2] / sqrt(beta kappa), k = 1..n.

    ``chitilde_0 = 0`` at k = n.
    """
    n, kappa, beta = s.n, s.kappa, s.beta
    mc, mt, _ = laguerre_coefficients(n, kappa, beta)
    ct = np.zeros(n)
    ct[:-1] = s.chitilde
    mt_full = np.zeros(n)
    mt_full[:-1] = mt
    second = laguerre_chi_params(n, kappa, beta) + beta * (n - np.arange(1, n + 1))
    mean_sq = second - 2.0 * mc * mt_full
    return ((s.chi - ct) ** 2 - mean_sq) / math.sqrt(beta * kappa)


def _require_prime(s):
    if s.kappa < s.n + 1:
        raise ParameterError(f"L'(v) needs kappa >= n + 1, got kappa={s.kappa}, n={s.n}")


def laguerre_prime_noise(s, v):
    """Noise of L'(v): (1/sqrt(beta)) [sum -Z v^2 + sum -Ztilde v^2 + 2 sum -Y v_k v_{k+1}]."""
    v = _as_vec(v, s.n)
    return float(-_laguerre_noise_term(s, v))


def laguerre_prime_noise_grouped(s, v):
    """The same noise regrouped around U_k.

    Equal to :func:`laguerre_prime_noise` identically; note the factor 2 on
    the Y group, which the expansion of U_k requires.
    """
    v = _as_vec(v, s.n)
    _, zt, y = laguerre_noise(s)
    u = u_noise(s)
    v2 = v * v
    total = (-np.dot(u, v2) - np.dot(zt[1:], v2[1:] - v2[:-1])
             - 2.0 * np.dot(y, v[:-1] * (v[1:] + v[:-1])))
    return float(total / math.sqrt(s.beta))


def laguerre_form_prime(s, v):
    """Simplified minimal-eigenvalue form L'(v); requires kappa >= n + 1."""
    _require_prime(s)
    v = _as_vec(v, s.n)
    n, kappa, beta = s.n, s.kappa, s.beta
    _, _, lam = laguerre_coefficients(n, kappa, beta)
    alpha = 1.0 - math.sqrt(n / kappa)
    drift = np.dot(lam, (v[1:] + v[:-1]) ** 2) + alpha ** 2 * _kweight(v) / math.sqrt(n)
    return float(laguerre_prime_noise(s, v) - drift)


# ---------------------------------------------------------------------------
# summation by parts and windowed maxima

def _partial_sums(s, length):
    s = np.asarray(s, dtype=float)
    ext = np.zeros(length)
    k = min(s.size, length)
    ext[:k] = s[:k]
    out = np.zeros(length + 1)
    out[1:] = np.cumsum(ext)
    return out  # out[k] = S_k, S_0 = 0


def sum_by_parts(s, t, m):
    """Both sides of the windowed summation-by-parts identity.

    Returns ``(lhs, rhs)`` with ``lhs = sum_{k=1}^n s_k t_k`` and ``rhs`` the
    window-averaged form; ``s`` is zero-extended past its end as needed.
    Window sums are formed directly (O(n m)) rather than as differences of
    partial sums, so that m = 1 reproduces ``lhs`` bit for bit.
    """
    if int(m) != m or m < 1:
        raise ParameterError(f"m must be a positive integer, got {m}")
    m = int(m)
    t = np.asarray(t, dtype=float)
    n = t.size
    S = _partial_sums(s, n + m)
    ext = np.zeros(n + m)
    k = min(len(s), n + m)
    ext[:k] = np.asarray(s, dtype=float)[:k]
    lhs = math.fsum(ext[:n] * t)
    win = sliding_window_view(ext, m)[:n].sum(axis=1)  # s_k + ... + s_{k+m-1}
    first = math.fsum(win * t) / m
    text = np.zeros(n + 2)
    text[1:n + 1] = t
    # T_k - S_k = (1/m) sum_{l=k}^{k+m-1} (S_l - S_k), k = 0..n
    dev = (sliding_window_view(S, m)[:n + 1] - S[:n + 1, None]).sum(axis=1) / m
    second = math.fsum(dev * (text[1:] - text[:-1]))
    return lhs, first + second


def delta_m(s, m, k):
    """max over l in [k+1, k+m] of |S_l - S_k| for the zero-extended sequence."""
    if int(m) != m or m < 1:
        raise ParameterError("m must be a positive integer")
    if k < 0:
        raise ParameterError("k must be nonnegative")
    S = _partial_sums(s, k + m)
    return float(np.max(np.abs(S[k + 1:k + m + 1] - S[k])))


# ---------------------------------------------------------------------------
# test vectors

def _tent(x):
    return np.minimum(x, 1.0 - x)


def _support_vector(n, length, step):
    if length < 1:
        raise ParameterError("test vector support is empty")
    v = np.zeros(n)
    k = np.arange(1, length + 1)
    v[:length] = _tent(step * k)
    if not np.any(v > 0):
        raise ParameterError("test vector vanishes identically")
    return v


def test_vector_left_hermite(n, eps):
    """Flat tent of support n*eps: v_k = (k/(n eps)) ^ (1 - k/(n eps))."""
    if not n * eps >= 1:
        raise ParameterError("left Hermite test vector needs n * eps >= 1")
    return _support_vector(n, min(n, math.floor(n * eps)), 1.0 / (n * eps))


def test_vector_right_hermite(n, eps):
    """Localized tent of support eps^{-1/2}; needs n eps^{3/2} >= 1."""
    if not n * eps ** 1.5 >= 1:
        raise ParameterError("right Hermite test vector needs n * eps^(3/2) >= 1")
    return _support_vector(n, min(n, math.floor(eps ** -0.5)), math.sqrt(eps))


def test_vector_left_laguerre(n, kappa, eps):
    """Tent of support n eps / delta with delta = sqrt(n / kappa)."""
    delta = math.sqrt(n / kappa)
    if not eps <= delta:
        raise ParameterError(f"left Laguerre test vector needs eps <= sqrt(n/kappa) = {delta:.4g}")
    if not n * eps / delta >= 1:
        raise ParameterError("left Laguerre test vector needs n * eps / delta >= 1")
    return _support_vector(n, min(n, math.floor(n * eps / delta)), delta / (n * eps))


# test_* names above are library functions, not pytest tests
for _f in (test_vector_left_hermite, test_vector_right_hermite, test_vector_left_laguerre):
    _f.__test__ = False
del _f

_FAMILIES = ("gaussian", "walk", "bump", "spike", "constant", "alternating", "edge")


def random_test_vector(n, stream):
    """A random vector from a mix of rough, smooth and localized families."""
    fam = _FAMILIES[int(stream.uniform() * len(_FAMILIES))]
    if fam == "gaussian":
        v = stream.normal(n)
    elif fam == "walk":
        v = np.cumsum(stream.normal(n))
    elif fam == "bump":
        c = stream.uniform() * n
        w = 0.5 + stream.uniform() * n / 2
        v = np.exp(-0.5 * ((np.arange(n) - c) / w) ** 2) * (1 + 0.1 * stream.normal(n))
    elif fam == "spike":
        v = np.zeros(n)
        v[int(stream.uniform() * n)] = 1.0
    elif fam == "constant":
        v = np.ones(n)
    elif fam == "alternating":
        v = (-1.0) ** np.arange(n) * (1 + 0.1 * stream.uniform(n))
    else:
        L = 1 + int(stream.uniform() * max(1, n // 4))
        v = np.zeros(n)
        if stream.uniform() < 0.5:
            v[:L] = stream.normal(L)
        else:
            v[n - L:] = stream.normal(L)
    if not np.any(v != 0):
        v[0] = 1.0
    return v / math.sqrt(np.dot(v, v))


# ---------------------------------------------------------------------------
# sandwich calibration

@dataclass(frozen=True)
class CalibrationResult:
    kind: str
    a: float
    b: float
    trials: int
    passing_a: tuple
    passing_b: tuple
    worst_lower_ratio: float
    worst_upper_ratio: float


DEFAULT_GRID = tuple((2.0 ** i, 2.0 ** -j) for i in range(0, 7) for j in range(1, 9))


def calibrate_sandwich(kind, trial_grid=DEFAULT_GRID, sample_count=10_000,
                       n_grid=(2, 3, 5, 10, 20, 50, 100, 200), beta_grid=(1.0, 2.0, 4.0),
                       kappa_offsets=(0.5, 1.0, 5.0), kappa_ratios=(1.0, 2.0, 4.0, 16.0),
                       seed=4, slack=1e-9):
    """Find sandwich constants ``form_a <= form <= form_b`` over random trials.

    Each trial draws a sample (n, beta and for Laguerre kappa picked from the
    grids) and a random unit vector.  The lower inequality is checked for every
    candidate ``a`` and the upper one for every candidate ``b``; ``a`` is the
    smallest passing value, ``b`` the largest.  Violations are measured with
    slack ``slack * scale`` where scale bounds the magnitude of the terms.
    """
    if kind not in ("hermite", "laguerre"):
        raise ValueError("kind must be 'hermite' or 'laguerre'")
    if not trial_grid or not n_grid or not beta_grid:
        raise ValueError("grids must be nonempty")
    a_vals = sorted({float(a) for a, _ in trial_grid})
    b_vals = sorted({float(b) for _, b in trial_grid}, reverse=True)
    a_ok = {a: True for a in a_vals}
    b_ok = {b: True for b in b_vals}
    worst_lo = 0.0
    worst_hi = math.inf
    key = derive_seed(seed, "calibrate", kind)
    for i in range(sample_count):
        st = RngStream(key, i)
        n = int(n_grid[int(st.uniform() * len(n_grid))])
        beta = float(beta_grid[int(st.uniform() * len(beta_grid))])
        if kind == "hermite":
            smp = sample_hermite(HermiteParams(n, beta), st)
            form, form_c = hermite_form, hermite_form_c
        else:
            if st.uniform() < 0.3:
                kappa = n - 1 + float(kappa_offsets[int(st.uniform() * len(kappa_offsets))])
            else:
                kappa = n * float(kappa_ratios[int(st.uniform() * len(kappa_ratios))])
            smp = sample_laguerre(LaguerreParams(n, kappa, beta), st)
            form, form_c = laguerre_form, laguerre_form_c
        v = random_test_vector(n, st)
        f = form(smp, v)
        e = energy(v)
        # form_c(v) = noise - c * energy, so the deterministic gap is:
        det = f - form_c(smp, v, 1.0) - e
        if e > 0:
            worst_lo = max(worst_lo, -det / e)
            worst_hi = min(worst_hi, -det / e)
        scale = 1.0 + abs(f) + abs(det) + e
        for a in a_vals:
            if a_ok[a] and form_c(smp, v, a) > f + slack * scale * a:
                a_ok[a] = False
        for b in b_vals:
            if b_ok[b] and f > form_c(smp, v, b) + slack * scale:
                b_ok[b] = False
    passing_a = tuple(a for a in a_vals if a_ok[a])
    passing_b = tuple(b for b in b_vals if b_ok[b])
    if not passing_a or not passing_b:
        raise CalibrationError(
            f"{kind}: no passing constant (a candidates {a_vals}, b candidates {b_vals}); "
            f"observed -det/energy in [{worst_hi:.4g}, {worst_lo:.4g}]")
    return CalibrationResult(kind, min(passing_a), max(passing_b), sample_count,
                             passing_a, passing_b, worst_lo, worst_hi)
