"""Tridiagonal beta-Hermite and bidiagonal beta-Laguerre matrix models.

Samples keep the raw noise (Gaussian diagonal and chi off-diagonals) and build
matrices on demand, because the quadratic forms need the centered chi values
that a matrix alone cannot give back.

Index map (0-based arrays, 1-based ``k`` as in the formulas):

===================  =================================  ==========
array element        distribution                       k
===================  =================================  ==========
Hermite ``g[i]``     N(0, 2)                            i + 1
Hermite ``chi[i]``   chi_{beta (n - k)}                 i + 1
Laguerre ``chi[i]``  chi_{beta (kappa - k + 1)}         i + 1
Laguerre ``chitilde[i]``  chi_{beta (n - k)}            i + 1
===================  =================================  ==========

The Laguerre ``chitilde[i]`` is the subdiagonal entry of row ``i + 2`` of the
lower-bidiagonal factor ``B``.
"""
import math
from dataclasses import dataclass

import numba
import numpy as np

from .randkit import RngStream, rng_chi, rng_normal

__all__ = [
    "SymTridiagonal",
    "HermiteParams",
    "LaguerreParams",
    "HermiteSample",
    "LaguerreSample",
    "ParameterError",
    "hermite_chi_params",
    "laguerre_chi_params",
    "laguerre_chitilde_params",
    "sample_hermite",
    "sample_laguerre",
    "laguerre_matrix",
    "laguerre_bidiagonal",
]

_SQRT2 = math.sqrt(2.0)


class ParameterError(ValueError):
    """Raised for ensemble or query parameters outside their valid range."""


@dataclass(frozen=True)
class SymTridiagonal:
    """Symmetric tridiagonal matrix stored as diagonal and off-diagonal."""

    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.diag, dtype=float)
        e = np.ascontiguousarray(self.offdiag, dtype=float)
        if d.ndim != 1 or e.ndim != 1 or d.size < 1:
            raise ValueError("diag must be a nonempty 1-d array, offdiag 1-d")
        if e.size != d.size - 1:
            raise ValueError(f"offdiag has length {e.size}, expected {d.size - 1}")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValueError("matrix entries must be finite")
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "offdiag", e)

    @property
    def n(self):
        return self.diag.size

    def to_dense(self):
        a = np.diag(self.diag)
        if self.n > 1:
            idx = np.arange(self.n - 1)
            a[idx, idx + 1] = self.offdiag
            a[idx + 1, idx] = self.offdiag
        return a

    def gershgorin(self):
        """(lower, upper) bounds containing every eigenvalue."""
        r = np.zeros(self.n)
        ae = np.abs(self.offdiag)
        r[:-1] += ae
        r[1:] += ae
        return float(np.min(self.diag - r)), float(np.max(self.diag + r))

    def norm(self):
        """Infinity norm, an upper bound on the spectral radius."""
        r = np.abs(self.diag).copy()
        ae = np.abs(self.offdiag)
        r[:-1] += ae
        r[1:] += ae
        return float(r.max())

    def quadratic(self, v):
        """v^T T v."""
        v = np.asarray(v, dtype=float)
        return float(np.dot(self.diag, v * v) + 2.0 * np.dot(self.offdiag, v[:-1] * v[1:]))


@dataclass(frozen=True)
class HermiteParams:
    n: int
    beta: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ParameterError(f"beta must be positive, got {self.beta}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def below_theory_range(self):
        """True when beta < 1, outside the range the tail bounds are proved for."""
        return self.beta < 1


@dataclass(frozen=True)
class LaguerreParams:
    n: int
    kappa: float
    beta: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if not (self.kappa > self.n - 1 and math.isfinite(self.kappa)):
            raise ParameterError(f"kappa must exceed n - 1 = {self.n - 1}, got {self.kappa}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def below_theory_range(self):
        return self.beta < 1


def hermite_chi_params(n, beta):
    """Chi parameters beta*(n-k), k = 1..n-1, of the Hermite off-diagonal."""
    return beta * (n - np.arange(1, n, dtype=float))


def laguerre_chi_params(n, kappa, beta):
    """Chi parameters beta*(kappa-k+1), k = 1..n, of the bidiagonal's diagonal."""
    return beta * (kappa - np.arange(1, n + 1, dtype=float) + 1.0)


def laguerre_chitilde_params(n, beta):
    """Chi parameters beta*(n-k), k = 1..n-1, of the bidiagonal's subdiagonal."""
    return beta * (n - np.arange(1, n, dtype=float))


@dataclass(frozen=True)
class HermiteSample:
    params: HermiteParams
    g: np.ndarray
    chi: np.ndarray

    @property
    def n(self):
        return self.params.n

    @property
    def beta(self):
        return self.params.beta

    def matrix(self):
        s = 1.0 / math.sqrt(self.beta)
        return SymTridiagonal(self.g * s, self.chi * s)


@dataclass(frozen=True)
class LaguerreSample:
    params: LaguerreParams
    chi: np.ndarray
    chitilde: np.ndarray

    @property
    def n(self):
        return self.params.n

    @property
    def kappa(self):
        return self.params.kappa

    @property
    def beta(self):
        return self.params.beta

    def matrix(self):
        return laguerre_matrix(self)


# Draw order is part of the reproducibility contract: the Monte Carlo kernels
# call these same routines, so sample i of an experiment can be rebuilt with
# sample_*(params, RngStream(key, i)).

@numba.njit(cache=True)
def hermite_draw(st, n, beta, g, chi):
    for i in range(n):
        g[i] = _SQRT2 * rng_normal(st)
    for i in range(n - 1):
        chi[i] = rng_chi(st, beta * (n - 1 - i))


@numba.njit(cache=True)
def laguerre_draw(st, n, kappa, beta, chi, chitilde):
    for i in range(n):
        chi[i] = rng_chi(st, beta * (kappa - i))
    for i in range(n - 1):
        chitilde[i] = rng_chi(st, beta * (n - 1 - i))


@numba.njit(cache=True)
def hermite_fill(st, n, beta, d, e2):
    """Draw a Hermite sample straight into (diag, offdiag**2) form."""
    s = 1.0 / math.sqrt(beta)
    for i in range(n):
        d[i] = _SQRT2 * rng_normal(st) * s
    for i in range(n - 1):
        c = rng_chi(st, beta * (n - 1 - i))
        e2[i] = c * c / beta


@numba.njit(cache=True)
def laguerre_fill(st, n, kappa, beta, d, e2, chi, chitilde):
    laguerre_draw(st, n, kappa, beta, chi, chitilde)
    inv = 1.0 / beta
    d[0] = chi[0] * chi[0] * inv
    for i in range(1, n):
        d[i] = (chi[i] * chi[i] + chitilde[i - 1] * chitilde[i - 1]) * inv
    for i in range(n - 1):
        p = chi[i] * chitilde[i] * inv
        e2[i] = p * p


def sample_hermite(params, stream):
    """Draw one beta-Hermite tridiagonal.

    Parameters
    ----------
    params : HermiteParams
    stream : RngStream
        Consumed in place.
    """
    n = params.n
    g = np.empty(n)
    chi = np.empty(n - 1)
    hermite_draw(stream.state, n, params.beta, g, chi)
    return HermiteSample(params, g, chi)


def sample_laguerre(params, stream):
    """Draw one beta-Laguerre bidiagonal factor (as raw chi variables)."""
    n = params.n
    chi = np.empty(n)
    chitilde = np.empty(n - 1)
    laguerre_draw(stream.state, n, params.kappa, params.beta, chi, chitilde)
    return LaguerreSample(params, chi, chitilde)


def laguerre_bidiagonal(s):
    """Dense lower-bidiagonal factor B with L = B B^T."""
    n = s.n
    b = np.diag(s.chi)
    if n > 1:
        b[np.arange(1, n), np.arange(n - 1)] = s.chitilde
    return b / math.sqrt(s.beta)


def laguerre_matrix(s):
    """Tridiagonal L = B B^T built entrywise from the raw chi draws."""
    inv = 1.0 / s.beta
    d = s.chi * s.chi
    d[1:] += s.chitilde * s.chitilde
    return SymTridiagonal(d * inv, s.chi[:-1] * s.chitilde * inv)
