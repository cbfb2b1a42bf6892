"""Extremal eigenvalues of symmetric tridiagonals by Sturm-sequence bisection.

``dense_eigen_oracle`` is a deliberately independent, slow cross-check (cyclic
Jacobi on the dense matrix) for small matrices.
"""
import math
from dataclasses import dataclass

import numba
import numpy as np

from .ensembles import SymTridiagonal

__all__ = [
    "EigenResult",
    "sturm_count",
    "lambda_max",
    "lambda_min",
    "dense_eigen_oracle",
    "ORACLE_MAX_N",
]

ORACLE_MAX_N = 512
_TINY = 1e-280


@dataclass(frozen=True)
class EigenResult:
    value: float
    iterations: int
    bracket_width: float


@numba.njit(cache=True)
def sturm_count_e2(d, e2, x, pivmin):
    """Number of eigenvalues strictly below ``x``; ``e2`` holds offdiag**2."""
    n = d.size
    q = d[0] - x
    if abs(q) < pivmin:
        q = -pivmin if q < 0.0 else pivmin
    count = 1 if q < 0.0 else 0
    for i in range(1, n):
        q = d[i] - x - e2[i - 1] / q
        if abs(q) < pivmin:
            q = -pivmin if q < 0.0 else pivmin
        if q < 0.0:
            count += 1
    return count


@numba.njit(cache=True)
def gershgorin_e2(d, e2):
    n = d.size
    lo = math.inf
    hi = -math.inf
    for i in range(n):
        r = 0.0
        if i > 0:
            r += math.sqrt(e2[i - 1])
        if i < n - 1:
            r += math.sqrt(e2[i])
        if d[i] - r < lo:
            lo = d[i] - r
        if d[i] + r > hi:
            hi = d[i] + r
    return lo, hi


@numba.njit(cache=True)
def bisect_extreme(d, e2, want_max, tol, pivmin):
    """Bisection for the largest (``want_max``) or smallest eigenvalue.

    Returns (midpoint, iterations, final bracket width).
    """
    n = d.size
    lo, hi = gershgorin_e2(d, e2)
    # widen by a hair so the bracket is strict even for exact Gershgorin ties
    pad = 4.0 * pivmin + 1e-15 * max(abs(lo), abs(hi))
    lo -= pad
    hi += pad
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        c = sturm_count_e2(d, e2, mid, pivmin)
        if want_max:
            if c < n:
                lo = mid
            else:
                hi = mid
        else:
            if c >= 1:
                hi = mid
            else:
                lo = mid
        it += 1
    return 0.5 * (lo + hi), it, hi - lo


def _prep(T):
    if not isinstance(T, SymTridiagonal):
        raise TypeError("expected a SymTridiagonal")
    e2 = T.offdiag * T.offdiag
    pivmin = _TINY * max(1.0, T.norm())
    return T.diag, e2, pivmin


def sturm_count(T, x):
    """Number of eigenvalues of ``T`` strictly below ``x``.

    >>> sturm_count(SymTridiagonal([1.0, 2.0, 3.0], [0.0, 0.0]), 2.5)
    2
    """
    d, e2, pivmin = _prep(T)
    return int(sturm_count_e2(d, e2, float(x), pivmin))


def default_tol(T):
    lo, hi = T.gershgorin()
    return 1e-10 * max(1.0, 0.5 * (hi - lo))


def _extreme(T, tol, want_max):
    d, e2, pivmin = _prep(T)
    if tol is None:
        tol = default_tol(T)
    if not tol > 0:
        raise ValueError("tol must be positive")
    v, it, w = bisect_extreme(d, e2, want_max, float(tol), pivmin)
    return EigenResult(float(v), int(it), float(w))


def lambda_max(T, tol=None):
    """Largest eigenvalue to within ``tol`` (default 1e-10 * Gershgorin radius)."""
    return _extreme(T, tol, True)


def lambda_min(T, tol=None):
    """Smallest eigenvalue to within ``tol``."""
    return _extreme(T, tol, False)


@numba.njit(cache=True)
def _jacobi_eigenvalues(a, tol):
    n = a.shape[0]
    for _sweep in range(100):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if math.sqrt(off) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
    out = np.empty(n)
    for i in range(n):
        out[i] = a[i, i]
    return out


def dense_eigen_oracle(T):
    """Full sorted spectrum by cyclic Jacobi rotations on the dense matrix.

    Only for ``n <= 512``; it is O(n^3) per sweep and meant as a test oracle.
    """
    if T.n > ORACLE_MAX_N:
        raise ValueError(f"dense oracle limited to n <= {ORACLE_MAX_N}, got {T.n}")
    a = T.to_dense()
    tol = 1e-15 * max(1.0, T.norm())
    return np.sort(_jacobi_eigenvalues(a, tol))
