"""Subject-level effect sizes with analytic variances.

Each estimator reduces one subject's raw samples to a :class:`SubjectEffect`
(the effect estimate and the variance of that estimate). These are the only
inputs the group-level combiners in :mod:`nestedstats.combine` need.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import dist
from .dist import RngState
from .errors import (
    DegenerateDataError,
    DomainError,
    InsufficientDataError,
    ShapeError,
    SingularDesignError,
)


class EffectKind(str, enum.Enum):
    MEAN = "mean"
    PAIRED_DIFF = "paired"
    WELCH_DIFF = "welch"
    AUC = "auc"
    FISHER_Z = "fisher_z"
    OLS_COEF = "ols"


@dataclass(frozen=True)
class SubjectEffect:
    """One subject's effect estimate and the estimated variance of it."""

    theta_hat: float
    var_hat: float
    kind: EffectKind
    n: tuple[int, ...]
    df: Optional[float] = None
    subject_id: Optional[str] = None

    def __post_init__(self):
        if not self.var_hat >= 0:
            raise DomainError(f"var_hat must be >= 0, got {self.var_hat}")
        if self.kind is EffectKind.AUC and not 0.0 <= self.theta_hat <= 1.0:
            raise DomainError(f"AUC must lie in [0, 1], got {self.theta_hat}")
        if not math.isfinite(self.theta_hat):
            raise DomainError("theta_hat must be finite")

    def with_id(self, subject_id: str) -> "SubjectEffect":
        return SubjectEffect(self.theta_hat, self.var_hat, self.kind, self.n, self.df, subject_id)


@dataclass(frozen=True)
class TestResult:
    """Test statistic with one- and two-tailed p-values.

    ``dist`` is ``"normal"``, ``"t"`` or ``"chi2"``; ``df`` is set for the
    latter two. For chi-squared tests only the upper tail is meaningful and
    ``p_two`` repeats it.
    """

    statistic: float
    dist: str
    df: Optional[float]
    p_one_low: float
    p_one_high: float
    p_two: float

    __test__ = False  # keep pytest from collecting this class

    @classmethod
    def normal(cls, z: float) -> "TestResult":
        return cls._two_sided(z, "normal", None, dist.std_normal_cdf(z), dist.std_normal_sf(z))

    @classmethod
    def student_t(cls, t: float, df: float) -> "TestResult":
        return cls._two_sided(t, "t", float(df), dist.student_t_cdf(t, df), dist.student_t_sf(t, df))

    @classmethod
    def chi2_upper(cls, q: float, df: float) -> "TestResult":
        p = dist.chi_squared_sf(q, df)
        return cls(float(q), "chi2", float(df), 1.0 - p, p, p)

    @classmethod
    def _two_sided(cls, stat, name, df, low, high) -> "TestResult":
        return cls(float(stat), name, df, float(low), float(high), min(1.0, 2.0 * min(low, high)))

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.p_two < alpha


@dataclass(frozen=True)
class TwoSampleData:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.size == 0 or y.size == 0:
            raise InsufficientDataError(f"both conditions need samples, got {x.size} and {y.size}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class PairedData:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape != y.shape:
            raise ShapeError(f"paired samples differ in length: {x.size} vs {y.size}")
        if x.size == 0:
            raise InsufficientDataError("no pairs")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def diffs(self) -> np.ndarray:
        return self.x - self.y


@dataclass(frozen=True)
class RegressionData:
    """Regressors ``X`` (N x K, no intercept column) and responses ``y``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ShapeError(f"design has {X.shape[0]} rows but y has {y.size} entries")
        n, k = X.shape
        if n <= k + 1:
            raise InsufficientDataError(f"OLS with {k} regressors needs N > {k + 1}, got {n}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)


def _vector(samples, what: str = "samples") -> np.ndarray:
    arr = np.asarray(samples, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} contain non-finite values")
    return arr


# ---------------------------------------------------------------------------
# Means
# ---------------------------------------------------------------------------

def mean_effect(samples) -> SubjectEffect:
    """Sample mean with variance ``s^2 / N`` (``s^2`` unbiased), df ``N - 1``."""
    x = _vector(samples)
    n = x.size
    if n < 2:
        raise InsufficientDataError(f"mean_effect needs N >= 2, got {n}")
    return SubjectEffect(float(x.mean()), float(x.var(ddof=1) / n), EffectKind.MEAN, (n,), n - 1.0)


def one_sample_t(samples, theta0: float = 0.0) -> TestResult:
    eff = mean_effect(samples)
    if eff.var_hat <= 0:
        raise DegenerateDataError("one-sample t-test undefined for zero sample variance")
    return TestResult.student_t((eff.theta_hat - theta0) / math.sqrt(eff.var_hat), eff.df)


def paired_diff_effect(data: PairedData) -> SubjectEffect:
    eff = mean_effect(data.diffs)
    return SubjectEffect(eff.theta_hat, eff.var_hat, EffectKind.PAIRED_DIFF, eff.n, eff.df)


def welch_diff_effect(data: TwoSampleData) -> SubjectEffect:
    """Difference of means ``mean(x) - mean(y)``, Welch-Satterthwaite df."""
    nx, ny = data.x.size, data.y.size
    if nx < 2 or ny < 2:
        raise InsufficientDataError(f"Welch needs >= 2 samples per group, got {nx} and {ny}")
    x = _vector(data.x, "x")
    y = _vector(data.y, "y")
    vx = x.var(ddof=1) / nx
    vy = y.var(ddof=1) / ny
    var = vx + vy
    denom = vx * vx / (nx - 1) + vy * vy / (ny - 1)
    df = var * var / denom if denom > 0 else float(nx + ny - 2)
    return SubjectEffect(float(x.mean() - y.mean()), float(var), EffectKind.WELCH_DIFF, (nx, ny), float(df))


def effect_test(effect: SubjectEffect, theta0: float = 0.0) -> TestResult:
    """Subject-level test of ``theta == theta0`` from an effect and its variance.

    Uses Student's t when the effect carries degrees of freedom, otherwise
    the standard normal. AUC effects should use :func:`auc_null_test`.
    """
    if effect.var_hat <= 0:
        raise DegenerateDataError("cannot test an effect with zero variance")
    stat = (effect.theta_hat - theta0) / math.sqrt(effect.var_hat)
    if effect.df is None:
        return TestResult.normal(stat)
    return TestResult.student_t(stat, effect.df)


def welch_test(data: TwoSampleData) -> TestResult:
    return effect_test(welch_diff_effect(data))


# ---------------------------------------------------------------------------
# Ranks, AUC, signed ranks
# ---------------------------------------------------------------------------

def midranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positional ranks."""
    v = _vector(values, "values")
    if v.size == 0:
        raise InsufficientDataError("midranks of an empty vector")
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_v[1:] != sorted_v[:-1]])
    ends = np.r_[starts[1:], v.size]
    avg = (starts + ends + 1) / 2.0  # mean of positions start+1 .. end
    ranks = np.empty(v.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def hanley_mcneil_variance(auc: float, nx: int, ny: int) -> float:
    """Approximate variance of an AUC estimate for general AUC."""
    q1 = auc / (2.0 - auc)
    q2 = 2.0 * auc * auc / (1.0 + auc)
    a2 = auc * auc
    return (auc * (1.0 - auc) + (nx - 1) * (q1 - a2) + (ny - 1) * (q2 - a2)) / (nx * ny)


def auc_variance_floor(nx: int, ny: int) -> float:
    return 1.0 / (nx * ny * (nx + ny))


def auc_effect(data: TwoSampleData) -> SubjectEffect:
    """AUC = U / (N_X N_Y), with x the positive class.

    The variance is floored at ``1 / (N_X N_Y (N_X + N_Y))`` so that perfect
    separation still yields a finite inverse-variance weight. The normal
    approximation used for testing is advisory below N_X + N_Y = 20 and is
    applied regardless.
    """
    nx, ny = data.x.size, data.y.size
    if nx < 1 or ny < 1:
        raise InsufficientDataError(f"AUC needs both classes nonempty, got {nx} and {ny}")
    ranks = midranks(np.concatenate([data.x, data.y]))
    w = ranks[:nx].sum()
    u = w - nx * (nx + 1) / 2.0
    auc = min(1.0, max(0.0, u / (nx * ny)))
    var = max(hanley_mcneil_variance(auc, nx, ny), auc_variance_floor(nx, ny))
    return SubjectEffect(float(auc), float(var), EffectKind.AUC, (nx, ny), None)


def auc_null_variance(nx: int, ny: int) -> float:
    """Variance of the AUC under H0, i.e. Var(U) / (N_X N_Y)^2."""
    return (nx + ny + 1.0) / (12.0 * nx * ny)


def auc_null_test(data: TwoSampleData) -> TestResult:
    """Normal approximation to the rank-sum test, phrased on the AUC scale.

    The approximation is adequate for roughly N_X + N_Y >= 20; it is applied
    for any size without complaint.
    """
    eff = auc_effect(data)
    nx, ny = eff.n
    return TestResult.normal((eff.theta_hat - 0.5) / math.sqrt(auc_null_variance(nx, ny)))


def wilcoxon_signed_rank(diffs) -> TestResult:
    """Signed-rank test of symmetry about zero, normal approximation.

    Exact zeros are dropped before ranking; tied magnitudes get midranks.
    The statistic reported is W+ (sum of ranks of positive differences); the
    p-values come from the z-score without continuity or tie correction.
    """
    d = _vector(diffs, "diffs")
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise DegenerateDataError("all differences are zero")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    mean = n * (n + 1) / 4.0
    sd = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
    z = (w_plus - mean) / sd
    res = TestResult.normal(z)
    return TestResult(w_plus, res.dist, None, res.p_one_low, res.p_one_high, res.p_two)


def signed_rank_z(w_plus: float, n: int) -> float:
    return (w_plus - n * (n + 1) / 4.0) / math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------

def fisher_z(rho):
    """arctanh; defined on the open interval (-1, 1)."""
    r = np.asarray(rho, dtype=float)
    if not np.all(np.abs(r) < 1.0):
        raise DomainError("Fisher z requires |rho| < 1")
    out = np.arctanh(r)
    return float(out) if out.ndim == 0 else out


def fisher_z_inv(z):
    out = np.tanh(np.asarray(z, dtype=float))
    return float(out) if out.ndim == 0 else out


def pearson_r(data: PairedData) -> float:
    x = data.x - data.x.mean()
    y = data.y - data.y.mean()
    sxx = float(np.dot(x, x))
    syy = float(np.dot(y, y))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateDataError("correlation undefined: a coordinate has zero variance")
    r = float(np.dot(x, y)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def pearson_effect(data: PairedData) -> SubjectEffect:
    """Fisher-transformed Pearson correlation, variance ``1 / (N - 3)``."""
    n = data.x.size
    if n <= 3:
        raise InsufficientDataError(f"correlation variance needs N > 3, got {n}")
    r = pearson_r(data)
    if abs(r) >= 1.0:
        raise DegenerateDataError(f"perfect correlation (r = {r:+.0f}) has infinite Fisher z")
    return SubjectEffect(fisher_z(r), 1.0 / (n - 3), EffectKind.FISHER_Z, (n,), None)


def r_squared(rho_hat: float) -> float:
    """Coefficient of determination of a simple regression with intercept.

    Biased and sign-free, so it is not a valid input to inverse-variance
    combination; combine Fisher z values instead.
    """
    if not abs(rho_hat) <= 1.0:
        raise DomainError("|rho| must be <= 1")
    return rho_hat * rho_hat


# ---------------------------------------------------------------------------
# Linear regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OlsFit:
    beta_hat: np.ndarray
    coef_cov: np.ndarray
    sigma2_eta: float
    df: int
    n: int = field(default=0)


def ols_fit(data: RegressionData) -> OlsFit:
    """Least squares with an intercept, solved by QR decomposition.

    ``coef_cov`` is ``sigma2_eta * inv(X'X)``, assembled from the triangular
    factor rather than by inverting X'X.
    """
    n, k = data.X.shape
    p = k + 1
    if n <= p:
        raise InsufficientDataError(f"OLS with {k} regressors needs N > {p}, got {n}")
    X = np.column_stack([np.ones(n), data.X])
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(data.y))):
        raise DomainError("regression data contain non-finite values")
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= diag.max() * p * np.finfo(float).eps * 10:
        raise SingularDesignError("design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ data.y)
    resid = data.y - X @ beta
    df = n - p
    sigma2 = float(resid @ resid) / df
    r_inv = np.linalg.solve(r, np.eye(p))
    cov = sigma2 * (r_inv @ r_inv.T)
    return OlsFit(beta, cov, sigma2, df, n)


def ols_coef_effect(fit: OlsFit, k: int) -> SubjectEffect:
    """Coefficient ``k`` (0 = intercept) as an effect size."""
    if not 0 <= k < fit.beta_hat.size:
        raise IndexError(f"coefficient index {k} out of range 0..{fit.beta_hat.size - 1}")
    return SubjectEffect(float(fit.beta_hat[k]), max(0.0, float(fit.coef_cov[k, k])),
                         EffectKind.OLS_COEF, (fit.n,), float(fit.df))


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

def bootstrap_variance(samples: Sequence, statistic: Callable, B: int, rng: RngState) -> float:
    """Variance (ddof=1) of ``statistic`` over ``B`` with-replacement resamples.

    Resampling is along the first axis of ``samples``.
    """
    if B < 2:
        raise DomainError("bootstrap needs B >= 2 replicates")
    arr = np.asarray(samples)
    n = arr.shape[0]
    if n == 0:
        raise InsufficientDataError("cannot bootstrap an empty sample")
    stats = np.empty(B)
    for b in range(B):
        idx = rng.integers(0, n - 1, size=n)
        stats[b] = statistic(arr[idx])
    return float(stats.var(ddof=1))
