"""Deterministic random variates and the special functions behind chi moments.

Random numbers come from a Philox4x32-10 counter-based generator.  A stream is
identified by ``(seed, stream_id)``: the seed is the Philox key and the stream
id occupies the upper half of the 128-bit counter, so distinct stream ids walk
disjoint counter ranges.  Monte Carlo code uses the sample index as stream id,
which makes every draw a pure function of ``(seed, sample index)``.

The low-level generators operate on a small ``uint64`` state array so that
numba kernels elsewhere in the package can share them.  Layout::

    st[0]  key (64-bit seed)
    st[1]  stream id
    st[2]  next block counter
    st[3]  read position in the buffered block (4 means empty)
    st[4:8] buffered 32-bit output words
    st[8]  1 when a spare Gaussian is parked in st[9]
    st[9]  spare Gaussian (float64 bits)
"""
import math

import numba
import numpy as np

__all__ = [
    "RngStream",
    "derive_seed",
    "log_gamma",
    "mean_chi",
    "chi_moment",
    "sample_gaussian",
    "sample_chi",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_SH5 = np.uint64(5)
_SH6 = np.uint64(6)
_ONE = np.uint64(1)
_TWO = np.uint64(2)
_THREE = np.uint64(3)
_FOUR = np.uint64(4)
_ZERO = np.uint64(0)
_TWO_M53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi

STATE_SIZE = 10


@numba.njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x32 block function on 32-bit words held in uint64."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = (p1 >> _SH32) ^ c1 ^ k0
        n1 = p1 & _MASK32
        n2 = (p0 >> _SH32) ^ c3 ^ k1
        n3 = p0 & _MASK32
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@numba.njit(cache=True)
def rng_init(st, seed, stream_id):
    st[:] = _ZERO
    st[0] = seed
    st[1] = stream_id
    st[3] = _FOUR


@numba.njit(cache=True)
def _refill(st):
    ctr = st[2]
    w0, w1, w2, w3 = philox4x32(
        ctr & _MASK32, ctr >> _SH32, st[1] & _MASK32, st[1] >> _SH32,
        st[0] & _MASK32, st[0] >> _SH32,
    )
    st[4] = w0
    st[5] = w1
    st[6] = w2
    st[7] = w3
    st[2] = ctr + _ONE


@numba.njit(cache=True)
def rng_next_u32(st):
    pos = st[3]
    if pos >= _FOUR:
        _refill(st)
        st[3] = _ONE
        return st[4]
    st[3] = pos + _ONE
    return st[np.intp(pos) + 4]


@numba.njit(cache=True)
def rng_uniform(st):
    """Uniform double on the open interval (0, 1) with 53 random bits."""
    pos = st[3]
    if pos > _TWO:
        if pos == _THREE:
            a = st[7]
            _refill(st)
            b = st[4]
            st[3] = _ONE
        else:
            _refill(st)
            a = st[4]
            b = st[5]
            st[3] = _TWO
    else:
        i = np.intp(pos) + 4
        a = st[i]
        b = st[i + 1]
        st[3] = pos + _TWO
    return (float(a >> _SH5) * 67108864.0 + float(b >> _SH6) + 0.5) * _TWO_M53


@numba.njit(cache=True)
def rng_normal(st):
    # Box-Muller; the sine branch is parked as raw bits in st[9].
    f = st.view(np.float64)
    if st[8] != _ZERO:
        st[8] = _ZERO
        return f[9]
    u1 = rng_uniform(st)
    u2 = rng_uniform(st)
    rad = math.sqrt(-2.0 * math.log(u1))
    f[9] = rad * math.sin(_TWO_PI * u2)
    st[8] = _ONE
    return rad * math.cos(_TWO_PI * u2)


@numba.njit(cache=True)
def rng_gamma(st, shape):
    """Unit-scale gamma variate by Marsaglia-Tsang squeeze/rejection.

    Shapes below one are boosted: ``G(a) = G(a + 1) * U**(1/a)``.
    """
    a = shape + 1.0 if shape < 1.0 else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng_normal(st)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = rng_uniform(st)
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            break
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            break
    if shape < 1.0:
        return d * v * rng_uniform(st) ** (1.0 / shape)
    return d * v


@numba.njit(cache=True)
def rng_chi(st, r):
    return math.sqrt(2.0 * rng_gamma(st, 0.5 * r))


@numba.njit(cache=True)
def _fill_uniform(st, out):
    for i in range(out.size):
        out[i] = rng_uniform(st)


@numba.njit(cache=True)
def _fill_normal(st, out):
    for i in range(out.size):
        out[i] = rng_normal(st)


@numba.njit(cache=True)
def _fill_chi(st, r, out):
    for i in range(out.size):
        out[i] = rng_chi(st, r[i])


@numba.njit(cache=True)
def _fill_gamma(st, shape, out):
    for i in range(out.size):
        out[i] = rng_gamma(st, shape[i])


@numba.njit(cache=True)
def splitmix64(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed, *labels):
    """Mix a base seed with integer or string labels into a new 64-bit key.

    Used to give every (ensemble, n, beta, ...) configuration its own key, so
    runs at different sizes are independent while sharing one user seed.
    """
    h = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    for lab in labels:
        if isinstance(lab, str):
            v = int.from_bytes(lab.encode(), "little") & 0xFFFFFFFFFFFFFFFF
        elif isinstance(lab, float):
            v = int(np.float64(lab).view(np.uint64))
        else:
            v = int(lab) & 0xFFFFFFFFFFFFFFFF
        h = np.uint64(splitmix64(h ^ np.uint64(splitmix64(np.uint64(v)))))
    return int(h)


class RngStream:
    """A counter-based random stream.

    Two streams with the same ``(seed, stream_id)`` produce bit-identical
    sequences.  Streams are cheap to create; a stream must not be shared by
    two threads at once, but handing it from one thread to another is fine.

    Examples
    --------
    >>> a = RngStream(7, 0); b = RngStream(7, 0)
    >>> a.uniform() == b.uniform()
    True
    """

    def __init__(self, seed=0, stream_id=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self.state = np.empty(STATE_SIZE, dtype=np.uint64)
        rng_init(self.state, np.uint64(self.seed), np.uint64(self.stream_id))

    @property
    def counter(self):
        return int(self.state[2])

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def copy(self):
        other = RngStream(self.seed, self.stream_id)
        other.state[:] = self.state
        return other

    def spawn(self, stream_id):
        """New stream sharing this stream's seed."""
        return RngStream(self.seed, stream_id)

    def u32(self, size):
        out = np.empty(size, dtype=np.uint64)
        for i in range(size):
            out[i] = rng_next_u32(self.state)
        return out

    def uniform(self, size=None):
        if size is None:
            return float(rng_uniform(self.state))
        out = np.empty(size)
        _fill_uniform(self.state, out.reshape(-1))
        return out

    def normal(self, size=None):
        if size is None:
            return float(rng_normal(self.state))
        out = np.empty(size)
        _fill_normal(self.state, out.reshape(-1))
        return out

    def gamma(self, shape, size=None):
        shape = np.asarray(shape, dtype=float)
        if np.any(shape <= 0):
            raise ValueError("gamma shape must be positive")
        if size is None and shape.ndim == 0:
            return float(rng_gamma(self.state, float(shape)))
        shape = np.broadcast_to(shape, size if size is not None else shape.shape)
        out = np.empty(shape.shape)
        _fill_gamma(self.state, np.ascontiguousarray(shape).reshape(-1), out.reshape(-1))
        return out

    def chi(self, r, size=None):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise ValueError("chi parameter must be positive")
        if size is None and r.ndim == 0:
            return float(rng_chi(self.state, float(r)))
        r = np.broadcast_to(r, size if size is not None else r.shape)
        out = np.empty(r.shape)
        _fill_chi(self.state, np.ascontiguousarray(r).reshape(-1), out.reshape(-1))
        return out


def sample_gaussian(stream, mean=0.0, sd=1.0):
    """One draw from N(mean, sd**2); ``sd == 0`` returns ``mean`` exactly."""
    if sd < 0:
        raise ValueError("sd must be nonnegative")
    if sd == 0:
        return float(mean)
    return mean + sd * float(rng_normal(stream.state))


def sample_chi(stream, r):
    """One chi variate with (possibly fractional) parameter ``r > 0``."""
    if not r > 0:
        raise ValueError(f"chi parameter must be positive, got {r}")
    return float(rng_chi(stream.state, float(r)))


# ---------------------------------------------------------------------------
# log-gamma

def _zeta_table(kmax):
    # zeta(k) by direct sum plus Euler-Maclaurin tail at N = 40.
    N = 40
    out = np.zeros(kmax + 1)
    for k in range(2, kmax + 1):
        head = math.fsum(j ** -float(k) for j in range(1, N))
        tail = (N ** (1.0 - k) / (k - 1) + 0.5 * N ** -float(k)
                + k * N ** (-k - 1.0) / 12.0
                - k * (k + 1) * (k + 2) * N ** (-k - 3.0) / 720.0
                + k * (k + 1) * (k + 2) * (k + 3) * (k + 4) * N ** (-k - 5.0) / 30240.0)
        out[k] = head + tail
    return out


_EULER_GAMMA = 0.57721566490153286061
_SERIES_TERMS = 60
# Coefficients of lgamma(1 + z) = sum_k c_k z**k, valid for |z| < 1.
_LG1P_COEF = np.zeros(_SERIES_TERMS + 1)
_LG1P_COEF[1] = -_EULER_GAMMA
_zt = _zeta_table(_SERIES_TERMS)
for _k in range(2, _SERIES_TERMS + 1):
    _LG1P_COEF[_k] = (-1.0) ** _k * _zt[_k] / _k
del _zt, _k

# Stirling correction B_{2k} / (2k (2k - 1)), k = 1..8
_STIRLING = np.array([
    1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0, 1.0 / 1188.0,
    -691.0 / 360360.0, 1.0 / 156.0, -3617.0 / 122400.0,
])
_HALF_LOG_2PI = 0.91893853320467274178


@numba.njit(cache=True)
def _lgamma_1p(z):
    # lgamma(1 + z) for |z| <= 0.5 by Horner on the zeta series
    acc = 0.0
    for k in range(_SERIES_TERMS, 0, -1):
        acc = acc * z + _LG1P_COEF[k]
    return acc * z


@numba.njit(cache=True)
def _log_gamma(x):
    if x < 0.5:
        return _lgamma_1p(x) - math.log(x)
    if x < 1.5:
        return _lgamma_1p(x - 1.0)
    if x < 2.5:
        z = x - 2.0
        return math.log1p(z) + _lgamma_1p(z)
    if x < 13.0:
        # shift down into [1.5, 2.5): every term added is positive
        prod = 1.0
        y = x
        while y >= 2.5:
            y -= 1.0
            prod *= y
        z = y - 2.0
        return math.log(prod) + math.log1p(z) + _lgamma_1p(z)
    inv = 1.0 / x
    inv2 = inv * inv
    corr = 0.0
    for k in range(_STIRLING.size - 1, -1, -1):
        corr = corr * inv2 + _STIRLING[k]
    return (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + corr * inv


@numba.njit(cache=True)
def _log_gamma_array(x, out):
    for i in range(x.size):
        out[i] = _log_gamma(x[i])


def log_gamma(x):
    """Natural log of the gamma function for ``x > 0``.

    Accepts a scalar or an array.  Relative error stays below 1e-12 on
    [1e-3, 1e8] (checked against mpmath in the tests).
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)) or np.any(~np.isfinite(arr)):
        raise ValueError("log_gamma requires finite x > 0")
    if arr.ndim == 0:
        return float(_log_gamma(float(arr)))
    out = np.empty(arr.shape)
    _log_gamma_array(np.ascontiguousarray(arr).reshape(-1), out.reshape(-1))
    return out


# (E chi_r)^2 - (r - 1/2) = sum_j _MEANSQ[j] / r**(j+1), asymptotic in 1/r.
_MEANSQ = np.array([
    1 / 8, 1 / 16, -5 / 128, -23 / 256, 53 / 1024, 593 / 2048, -5165 / 32768,
    -110123 / 65536, 231743 / 262144, 8113223 / 524288,
])
_ASYMPTOTIC_FROM = 64.0
_DIRECT_BELOW = 4.0
_HALF_LOG_2 = 0.5 * math.log(2.0)


@numba.njit(cache=True)
def _mean_chi_asymptotic(r):
    t = 1.0 / r
    acc = 0.0
    for j in range(_MEANSQ.size - 1, -1, -1):
        acc = acc * t + _MEANSQ[j]
    # sqrt((r - 1/2) + small positive): rounding is monotone, so the
    # bounds sqrt(r - 1/2) <= E chi_r <= sqrt(r) survive in floating point.
    return math.sqrt((r - 0.5) + acc * t)


@numba.njit(cache=True)
def _mean_chi(r):
    if r < _DIRECT_BELOW:
        return math.exp(_HALF_LOG_2 + _log_gamma(0.5 * (r + 1.0)) - _log_gamma(0.5 * r))
    # E chi_r = E chi_{r+2} * r / (r + 1); a difference of two moderate log-gammas
    # costs up to 1e-14 relative, the short product about 1e-15
    f = 1.0
    while r < _ASYMPTOTIC_FROM:
        f *= r / (r + 1.0)
        r += 2.0
    return f * _mean_chi_asymptotic(r)


@numba.njit(cache=True)
def _mean_chi_array(r, out):
    for i in range(r.size):
        out[i] = _mean_chi(r[i])


def mean_chi(r):
    """Mean of a chi variable with parameter ``r``: sqrt(2) G((r+1)/2) / G(r/2).

    For ``r >= 64`` the ratio is evaluated from its asymptotic expansion in
    ``1/r`` instead of a difference of two large log-gammas.
    """
    arr = np.asarray(r, dtype=float)
    if np.any(~(arr > 0)) or np.any(~np.isfinite(arr)):
        raise ValueError("mean_chi requires finite r > 0")
    if arr.ndim == 0:
        return float(_mean_chi(float(arr)))
    out = np.empty(arr.shape)
    _mean_chi_array(np.ascontiguousarray(arr).reshape(-1), out.reshape(-1))
    return out


def chi_moment(r, p):
    """E[chi_r ** p] = 2**(p/2) G((r+p)/2) / G(r/2) for ``r + p > 0``."""
    if p == 0:
        return 1.0
    if p == 1:
        return mean_chi(r)
    if p == 2:
        return float(r)
    return math.exp(0.5 * p * math.log(2.0) + log_gamma(0.5 * (r + p)) - log_gamma(0.5 * r))
