"""Numerical kernels: distribution functions and seeded random streams.

Everything here accepts scalars or numpy arrays. Scalar input gives a
Python ``float`` back; array input gives an array of the broadcast shape.

Random numbers come from a counter-based generator built on the SplitMix64
finalizer. A stream is identified by a 64-bit key, and its j-th output is
``mix64(key + (j + 1) * GOLDEN)``. Child streams are derived from a parent
key and an integer index, so the stream for ``RngState(seed).spawn(r, s)``
is a pure function of ``(seed, r, s)``. No platform or library state is
involved, which keeps Monte Carlo results reproducible across machines.
"""

from __future__ import annotations

import math
from typing import Optional, Union

import numpy as np

from .errors import DomainError

ArrayLike = Union[float, np.ndarray]

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)

_erfc_u = np.frompyfunc(math.erfc, 1, 1)
_lgamma_u = np.frompyfunc(math.lgamma, 1, 1)


def _as_float_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _ret(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


def _erfc(x: np.ndarray) -> np.ndarray:
    return np.asarray(_erfc_u(x), dtype=float)


def _lgamma(x: np.ndarray) -> np.ndarray:
    return np.asarray(_lgamma_u(x), dtype=float)


# ---------------------------------------------------------------------------
# Standard normal
# ---------------------------------------------------------------------------

def std_normal_cdf(x: ArrayLike) -> ArrayLike:
    """Standard normal CDF, computed as ``erfc(-x / sqrt(2)) / 2``."""
    arr, scalar = _as_float_array(x)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input")
    return _ret(0.5 * _erfc(-arr / SQRT2), scalar)


def std_normal_sf(x: ArrayLike) -> ArrayLike:
    """Upper tail ``1 - Phi(x)`` without cancellation for large x."""
    arr, scalar = _as_float_array(x)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_sf requires finite input")
    return _ret(0.5 * _erfc(arr / SQRT2), scalar)


# Acklam's rational approximation, relative error below 1.2e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _inv_lower_half(p: np.ndarray) -> np.ndarray:
    """Quantile for 0 < p <= 0.5 (result <= 0), one Halley step of polish."""
    x = np.empty_like(p)
    tail = p < _P_LOW
    if np.any(tail):
        q = np.sqrt(-2.0 * np.log(p[tail]))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[tail] = num / den
    body = ~tail
    if np.any(body):
        q = p[body] - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[body] = num / den
    # Halley step on Phi(x) - p; x <= 0 so the cdf is evaluated in its accurate tail.
    e = 0.5 * _erfc(-x / SQRT2) - p
    u = e * SQRT2PI * np.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def std_normal_inv_cdf(p: ArrayLike) -> ArrayLike:
    """Inverse of the standard normal CDF on the open interval (0, 1)."""
    arr, scalar = _as_float_array(p)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("std_normal_inv_cdf requires 0 < p < 1")
    upper = arr > 0.5
    lower_p = np.where(upper, 1.0 - arr, arr)
    x = _inv_lower_half(np.atleast_1d(lower_p)).reshape(arr.shape)
    x = np.where(upper, -x, x)
    return _ret(x, scalar)


# ---------------------------------------------------------------------------
# Incomplete beta / gamma and the distributions built on them
# ---------------------------------------------------------------------------

_FPMIN = 1e-300
_EPS = 1e-15


def _betacf(a: np.ndarray, b: np.ndarray, x: np.ndarray, maxiter: int = 2000) -> np.ndarray:
    """Continued fraction for I_x(a, b), modified Lentz, elementwise."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
    d = 1.0 / d
    h = d.copy()
    for m in range(1, maxiter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _FPMIN, _FPMIN, c)
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _FPMIN, _FPMIN, c)
        d = 1.0 / d
        delta = d * c
        h *= delta
        if np.all(np.abs(delta - 1.0) < _EPS):
            break
    return h


def betainc(a: ArrayLike, b: ArrayLike, x: ArrayLike, y: Optional[ArrayLike] = None) -> ArrayLike:
    """Regularized incomplete beta function I_x(a, b).

    ``y`` may carry ``1 - x`` computed without cancellation by the caller.
    """
    a_, scalar_a = _as_float_array(a)
    b_, scalar_b = _as_float_array(b)
    x_, scalar_x = _as_float_array(x)
    y_ = 1.0 - x_ if y is None else np.asarray(y, dtype=float)
    a_, b_, x_, y_ = np.broadcast_arrays(a_, b_, x_, y_)
    a_, b_, x_, y_ = (np.atleast_1d(v).astype(float) for v in (a_, b_, x_, y_))
    if np.any(a_ <= 0) or np.any(b_ <= 0):
        raise DomainError("betainc requires a > 0 and b > 0")
    if np.any(x_ < 0) or np.any(x_ > 1):
        raise DomainError("betainc requires 0 <= x <= 1")

    with np.errstate(divide="ignore"):
        log_front = (_lgamma(a_ + b_) - _lgamma(a_) - _lgamma(b_)
                     + a_ * np.log(x_) + b_ * np.log(y_))
    front = np.exp(log_front)
    direct = x_ < (a_ + 1.0) / (a_ + b_ + 2.0)
    out = np.empty_like(x_)
    if np.any(direct):
        i = direct
        out[i] = front[i] * _betacf(a_[i], b_[i], x_[i]) / a_[i]
    if np.any(~direct):
        i = ~direct
        out[i] = 1.0 - front[i] * _betacf(b_[i], a_[i], y_[i]) / b_[i]
    out = np.clip(out, 0.0, 1.0)
    scalar = scalar_a and scalar_b and scalar_x
    return _ret(out.reshape(np.broadcast(a, b, x).shape), scalar)


def _student_t_tail(t: np.ndarray, df: np.ndarray) -> np.ndarray:
    """P(T > |t|) for Student's t; t and df already broadcast, df > 0."""
    t2 = t * t
    x = df / (df + t2)
    y = t2 / (df + t2)
    return 0.5 * np.asarray(betainc(0.5 * df, 0.5, x, y))


def _t_args(t, df):
    t_, scalar_t = _as_float_array(t)
    df_, scalar_df = _as_float_array(df)
    if not np.all(np.isfinite(t_)):
        raise DomainError("student_t requires finite t")
    if not np.all(df_ > 0):
        raise DomainError("student_t requires df > 0")
    t_, df_ = np.broadcast_arrays(t_, df_)
    return np.asarray(t_, float), np.asarray(df_, float), scalar_t and scalar_df


def student_t_cdf(t: ArrayLike, df: ArrayLike) -> ArrayLike:
    """CDF of Student's t with (possibly fractional) degrees of freedom."""
    t_, df_, scalar = _t_args(t, df)
    tail = _student_t_tail(t_, df_)
    return _ret(np.where(t_ > 0, 1.0 - tail, tail), scalar)


def student_t_sf(t: ArrayLike, df: ArrayLike) -> ArrayLike:
    """Upper tail P(T > t) of Student's t."""
    t_, df_, scalar = _t_args(t, df)
    tail = _student_t_tail(t_, df_)
    return _ret(np.where(t_ > 0, tail, 1.0 - tail), scalar)


def _gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if x == 0.0:
        return 1.0
    log_front = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        # series for P(a, x)
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(10000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        return max(0.0, 1.0 - total * math.exp(log_front))
    # continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return min(1.0, math.exp(log_front) * h)


def chi_squared_sf(q: ArrayLike, df: ArrayLike) -> ArrayLike:
    """Upper tail P(X > q) of the chi-squared distribution."""
    q_, scalar_q = _as_float_array(q)
    df_, scalar_df = _as_float_array(df)
    if np.any(np.isnan(q_)) or np.any(q_ < 0):
        raise DomainError("chi_squared_sf requires q >= 0")
    if not np.all(df_ > 0):
        raise DomainError("chi_squared_sf requires df > 0")
    q_, df_ = np.broadcast_arrays(q_, df_)
    out = np.array([_gamma_q(0.5 * k, 0.5 * v) for v, k in zip(q_.ravel(), df_.ravel())])
    return _ret(out.reshape(q_.shape), scalar_q and scalar_df)


# ---------------------------------------------------------------------------
# Counter-based random streams
# ---------------------------------------------------------------------------

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_SPAWN_SALT = 0x632BE59BD9B4E019


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_key(key: int, index: int) -> int:
    """Key of child stream ``index`` of the stream with ``key``."""
    if index < 0:
        raise DomainError("stream index must be nonnegative")
    return mix64(key ^ mix64(index * GOLDEN + _SPAWN_SALT))


def root_key(seed: int) -> int:
    return mix64(seed & MASK64)


def stream_uint64(keys, start: int, count: int) -> np.ndarray:
    """Raw outputs ``start .. start+count-1`` of each stream in ``keys``.

    Returns shape ``keys.shape + (count,)``.
    """
    k = np.asarray(keys, dtype=np.uint64)
    j = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = k[..., None] + j * np.uint64(GOLDEN)
        return _mix64_array(z)


def stream_uniforms(keys, start: int, count: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1) from 53 high bits."""
    u = stream_uint64(keys, start, count)
    return ((u >> np.uint64(11)).astype(float) + 0.5) * (2.0 ** -53)


def box_muller(u: np.ndarray) -> np.ndarray:
    """Standard normals from uniform pairs along the last axis (cosine branch)."""
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


_EXACT_CHI2_MAX_DF = 64


def chi2_uniform_count(k: int) -> int:
    """Uniforms consumed per variate by the exact integer-df chi-squared draw."""
    return k // 2 + (2 if k % 2 else 0)


def chi2_from_uniforms(u: np.ndarray, k: int) -> np.ndarray:
    """Chi-squared(k) variates, integer k, from ``chi2_uniform_count(k)`` uniforms each.

    An even part is ``-2 log`` of a product of uniforms (a sum of exponentials);
    an odd df adds one squared normal.
    """
    m = k // 2
    out = -2.0 * np.log(u[..., :m]).sum(axis=-1) if m else np.zeros(u.shape[:-1])
    if k % 2:
        out = out + box_muller(u[..., m:m + 2])[..., 0] ** 2
    return out


def _is_small_int(v: float) -> bool:
    return float(v).is_integer() and 1 <= v <= _EXACT_CHI2_MAX_DF


class RngState:
    """Seeded, splittable random stream.

    ``RngState(seed)`` is the root stream; ``spawn(r, s)`` returns the child
    stream for a path of nonnegative integers without touching the parent.
    Draw methods advance an internal counter.
    """

    __slots__ = ("seed", "key", "counter")

    def __init__(self, seed: int, key: Optional[int] = None):
        if seed < 0:
            raise DomainError("seed must be a nonnegative 64-bit integer")
        self.seed = int(seed) & MASK64
        self.key = root_key(self.seed) if key is None else int(key) & MASK64
        self.counter = 0

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, key=0x{self.key:016x}, counter={self.counter})"

    def spawn(self, *path: int) -> "RngState":
        key = self.key
        for index in path:
            key = derive_key(key, int(index))
        return RngState(self.seed, key)

    def uint64(self, count: int) -> np.ndarray:
        out = stream_uint64(self.key, self.counter, count)
        self.counter += count
        return out

    def _uniforms(self, count: int) -> np.ndarray:
        out = stream_uniforms(self.key, self.counter, count)
        self.counter += count
        return out

    def uniform(self, low: float = 0.0, high: float = 1.0, size: Optional[int] = None):
        n = 1 if size is None else int(size)
        out = low + (high - low) * self._uniforms(n)
        return float(out[0]) if size is None else out

    def integers(self, low: int, high: int, size: Optional[int] = None):
        """Uniform integers on the closed range [low, high]."""
        if high < low:
            raise DomainError("integers requires low <= high")
        n = 1 if size is None else int(size)
        out = low + np.floor(self._uniforms(n) * (high - low + 1)).astype(np.int64)
        return int(out[0]) if size is None else out

    def normal(self, mu: float = 0.0, sigma: float = 1.0, size: Optional[int] = None):
        if sigma < 0:
            raise DomainError("normal requires sigma >= 0")
        n = 1 if size is None else int(size)
        out = mu + sigma * box_muller(self._uniforms(2 * n))
        return float(out[0]) if size is None else out

    def gamma(self, shape: float, size: Optional[int] = None):
        """Gamma(shape, scale=1) by Marsaglia-Tsang rejection."""
        if not shape > 0:
            raise DomainError("gamma requires shape > 0")
        n = 1 if size is None else int(size)
        boost = shape < 1.0
        a = shape + 1.0 if boost else shape
        d = a - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        out = np.empty(n)
        pending = np.arange(n)
        while pending.size:
            m = pending.size
            u = self._uniforms(3 * m).reshape(m, 3)
            z = box_muller(u[:, :2])[:, 0]
            v = (1.0 + c * z) ** 3
            with np.errstate(invalid="ignore", divide="ignore"):
                ok = (v > 0) & (np.log(u[:, 2]) < 0.5 * z * z + d - d * v + d * np.log(v))
            out[pending[ok]] = d * v[ok]
            pending = pending[~ok]
        if boost:
            out *= self._uniforms(n) ** (1.0 / shape)
        return float(out[0]) if size is None else out

    def chisquare(self, df: float, size: Optional[int] = None):
        if not df > 0:
            raise DomainError("chisquare requires df > 0")
        n = 1 if size is None else int(size)
        if _is_small_int(df):
            k = int(df)
            u = self._uniforms(n * chi2_uniform_count(k)).reshape(n, -1)
            out = chi2_from_uniforms(u, k)
        else:
            out = 2.0 * self.gamma(0.5 * df, size=n)
        return float(out[0]) if size is None else out

    def f(self, d1: float, d2: float, size: Optional[int] = None):
        """F(d1, d2) as a ratio of scaled chi-squared variates."""
        if not (d1 > 0 and d2 > 0):
            raise DomainError("F distribution requires positive degrees of freedom")
        n = 1 if size is None else int(size)
        if _is_small_int(d1) and _is_small_int(d2):
            # Fixed consumption per variate, so batches can be laid out by index.
            out = f_from_uniforms(self._uniforms(n * f_uniform_count(d1, d2)).reshape(n, -1),
                                  int(d1), int(d2))
        else:
            out = (self.chisquare(d1, size=n) / d1) / (self.chisquare(d2, size=n) / d2)
        return float(out[0]) if size is None else out


def f_uniform_count(d1: int, d2: int) -> int:
    return chi2_uniform_count(int(d1)) + chi2_uniform_count(int(d2))


def f_from_uniforms(u: np.ndarray, d1: int, d2: int) -> np.ndarray:
    k1 = chi2_uniform_count(d1)
    c1 = chi2_from_uniforms(u[..., :k1], d1)
    c2 = chi2_from_uniforms(u[..., k1:], d2)
    return (c1 / d1) / (c2 / d2)


def sample_normal(rng: RngState, mu: float, sigma: float) -> float:
    """One draw from Normal(mu, sigma^2)."""
    return rng.normal(mu, sigma)


def sample_f(rng: RngState, d1: float, d2: float) -> float:
    """One draw from the F(d1, d2) distribution."""
    return rng.f(d1, d2)


def f_moments(d1: float, d2: float) -> tuple[float, float]:
    """Mean and variance of F(d1, d2); needs d2 > 4."""
    if d2 <= 4:
        raise DomainError("F variance is finite only for d2 > 4")
    mean = d2 / (d2 - 2.0)
    var = 2.0 * d2 ** 2 * (d1 + d2 - 2.0) / (d1 * (d2 - 2.0) ** 2 * (d2 - 4.0))
    return mean, var
