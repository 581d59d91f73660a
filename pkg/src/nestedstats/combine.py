"""Group-level inference from subject-level effects.

The central routine is :func:`combine_effects`, a weighted average of the
subjects' effects under a fixed-effect or random-effects model, with either
equal or inverse-variance weights. Random-effects weights use the
DerSimonian-Laird estimate of the between-subject variance.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import dist
from .effect import (
    EffectKind,
    SubjectEffect,
    TestResult,
    TwoSampleData,
    fisher_z_inv,
    one_sample_t,
    welch_diff_effect,
    effect_test,
)
from .errors import DegenerateDataError, DomainError, EffectKindError, InsufficientDataError

Z_975 = 1.959963984540054


class Model(str, enum.Enum):
    FIXED = "fe"
    RANDOM = "re"


class Scheme(str, enum.Enum):
    EQUAL = "equal"
    INVERSE_VARIANCE = "invvar"


class Policy(str, enum.Enum):
    Z = "z"
    T = "t"


class SmallSampleWarning(UserWarning):
    """Random-effects inference with few subjects tends to be anti-conservative."""


DL_MIN_SUBJECTS = 10


@dataclass(frozen=True)
class GroupResult:
    theta_hat: float
    var_hat: float
    weights: tuple[float, ...]  # normalized to sum to one
    tau2: float
    model: Model
    scheme: Scheme
    S: int


def _arrays(effects: Sequence[SubjectEffect]) -> tuple[np.ndarray, np.ndarray]:
    theta = np.array([e.theta_hat for e in effects], dtype=float)
    var = np.array([e.var_hat for e in effects], dtype=float)
    return theta, var


def _fsum(a: np.ndarray) -> float:
    # correctly rounded, hence independent of subject order
    return math.fsum(a.tolist())


def _check_variances(var: np.ndarray) -> None:
    bad = np.flatnonzero(~(var > 0) | ~np.isfinite(var))
    if bad.size:
        raise DegenerateDataError(
            f"subject variance must be positive and finite (subject index {int(bad[0])})")


def dl_tau2_from_arrays(theta: np.ndarray, var: np.ndarray) -> float:
    """DerSimonian-Laird between-subject variance, truncated at zero."""
    S = theta.size
    if S < 2:
        raise InsufficientDataError(f"between-subject variance needs S >= 2, got {S}")
    _check_variances(var)
    alpha = 1.0 / var
    sum_a = _fsum(alpha)
    theta_fe = _fsum(alpha * theta) / sum_a
    q = _fsum(alpha * (theta - theta_fe) ** 2)
    denom = sum_a - _fsum(alpha * alpha) / sum_a
    if denom <= 0:
        return 0.0
    return float(max(0.0, (q - S + 1) / denom))


def dl_tau_squared(effects: Sequence[SubjectEffect]) -> float:
    return dl_tau2_from_arrays(*_arrays(effects))


def _tau2_for(model: Model, theta: np.ndarray, var: np.ndarray) -> float:
    if Model(model) is Model.FIXED:
        return 0.0
    if theta.size < DL_MIN_SUBJECTS:
        warnings.warn(
            f"random-effects inference with S = {theta.size} < {DL_MIN_SUBJECTS} subjects; "
            "p-values may be too small", SmallSampleWarning, stacklevel=3)
    return dl_tau2_from_arrays(theta, var)


def weights(effects: Sequence[SubjectEffect], model: Model = Model.RANDOM,
            scheme: Scheme = Scheme.INVERSE_VARIANCE) -> np.ndarray:
    """Unnormalized subject weights: 1/S, or 1 / (var_s + tau2)."""
    theta, var = _arrays(effects)
    _check_variances(var)
    tau2 = _tau2_for(model, theta, var) if Scheme(scheme) is Scheme.INVERSE_VARIANCE else 0.0
    return _weights_from(var, tau2, Scheme(scheme))


def _weights_from(var: np.ndarray, tau2: float, scheme: Scheme) -> np.ndarray:
    if scheme is Scheme.EQUAL:
        return np.full(var.size, 1.0 / var.size)
    return 1.0 / (var + tau2)


def combine_effects(effects: Sequence[SubjectEffect], model: Model = Model.RANDOM,
                    scheme: Scheme = Scheme.INVERSE_VARIANCE) -> GroupResult:
    """Weighted group effect and its variance.

    The variance is ``sum(a_s^2 (var_s + tau2)) / sum(a_s)^2`` for general
    weights, which reduces to ``1 / sum(a_s)`` for inverse-variance weights.
    A single subject is passed through unchanged under the fixed-effect model.
    """
    model, scheme = Model(model), Scheme(scheme)
    theta, var = _arrays(effects)
    S = theta.size
    if S == 0:
        raise InsufficientDataError("no subjects to combine")
    _check_variances(var)
    if S == 1:
        if model is Model.RANDOM:
            raise InsufficientDataError("random-effects model needs S >= 2")
        warnings.warn("single subject: group result equals the subject's effect",
                      SmallSampleWarning, stacklevel=2)
        return GroupResult(float(theta[0]), float(var[0]), (1.0,), 0.0, model, scheme, 1)
    tau2 = _tau2_for(model, theta, var)
    alpha = _weights_from(var, tau2, scheme)
    sum_a = _fsum(alpha)
    theta_hat = _fsum(alpha * theta) / sum_a
    if scheme is Scheme.INVERSE_VARIANCE:
        var_hat = 1.0 / sum_a
    else:
        var_hat = _fsum(alpha * alpha * (var + tau2)) / sum_a ** 2
    # guard the convex-combination bound against last-bit rounding
    theta_hat = min(max(theta_hat, float(theta.min())), float(theta.max()))
    return GroupResult(theta_hat, var_hat, tuple((alpha / sum_a).tolist()), tau2, model, scheme, S)


def group_test(result: GroupResult, theta0: float = 0.0, policy: Policy = Policy.Z) -> TestResult:
    """z-test of the group effect, or t with S - 1 df under ``Policy.T``."""
    if not result.var_hat > 0:
        raise DegenerateDataError("group variance must be positive")
    stat = (result.theta_hat - theta0) / math.sqrt(result.var_hat)
    if Policy(policy) is Policy.T:
        if result.S < 2:
            raise InsufficientDataError("t reference needs S >= 2")
        return TestResult.student_t(stat, result.S - 1)
    return TestResult.normal(stat)


def critical_value(policy: Policy, S: int, level: float = 0.95) -> float:
    """Two-sided critical value of the reference distribution."""
    p = 0.5 + level / 2.0
    if Policy(policy) is Policy.Z:
        return Z_975 if level == 0.95 else dist.std_normal_inv_cdf(p)
    df = S - 1
    lo, hi = 0.0, 1.0
    while dist.student_t_cdf(hi, df) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dist.student_t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def confidence_interval(result: GroupResult, policy: Policy = Policy.Z,
                        level: float = 0.95) -> tuple[float, float]:
    half = critical_value(policy, result.S, level) * math.sqrt(result.var_hat)
    return result.theta_hat - half, result.theta_hat + half


def naive_summary_test(thetas, theta0: float = 0.0) -> TestResult:
    """One-sample t-test on the subject effects, ignoring their variances."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.size < 2:
        raise InsufficientDataError(f"naive summary test needs S >= 2, got {thetas.size}")
    return one_sample_t(thetas, theta0)


def stouffer_z(p_one_sided) -> float:
    p = np.asarray(p_one_sided, dtype=float).ravel()
    if p.size == 0:
        raise InsufficientDataError("no p-values to combine")
    if not np.all((p > 0.0) & (p < 1.0)):
        raise DomainError("Stouffer's method needs every p strictly inside (0, 1)")
    z_s = -np.asarray(dist.std_normal_inv_cdf(p))
    return _fsum(z_s) / math.sqrt(p.size)


def stouffer_combine(p_one_sided) -> TestResult:
    """Combine upper-tail one-sided p-values into a group z-score.

    Each ``p_s`` maps to ``z_s = Phi^-1(1 - p_s)`` (small p, large positive z)
    and ``z = sum(z_s) / sqrt(S)``. All inputs must refer to the same
    direction; ``p_two`` then tests for an effect in either direction.
    """
    return TestResult.normal(stouffer_z(p_one_sided))


def cochran_q(effects: Sequence[SubjectEffect]) -> TestResult:
    """Heterogeneity statistic Q with a chi-squared(S - 1) upper-tail p."""
    theta, var = _arrays(effects)
    S = theta.size
    if S < 2:
        raise InsufficientDataError(f"Cochran's Q needs S >= 2, got {S}")
    _check_variances(var)
    alpha = 1.0 / var
    theta_fe = _fsum(alpha * theta) / _fsum(alpha)
    q = _fsum(alpha * (theta - theta_fe) ** 2)
    return TestResult.chi2_upper(q, S - 1)


def pool_and_test(subjects: Sequence[TwoSampleData]) -> TestResult:
    """Welch test on all subjects' samples concatenated.

    Ignores the nesting and is kept only as a reference point; it is not a
    valid group-level test.
    """
    if len(subjects) == 0:
        raise InsufficientDataError("no subjects to pool")
    x = np.concatenate([s.x for s in subjects])
    y = np.concatenate([s.y for s in subjects])
    return effect_test(welch_diff_effect(TwoSampleData(x, y)))


@dataclass(frozen=True)
class CorrelationGroup:
    result: GroupResult  # in the Fisher z domain
    rho: float
    ci_low: float
    ci_high: float


def correlation_group(effects: Sequence[SubjectEffect], model: Model = Model.RANDOM,
                      scheme: Scheme = Scheme.INVERSE_VARIANCE,
                      policy: Policy = Policy.Z) -> CorrelationGroup:
    """Combine Fisher z values and map the estimate and interval back to r."""
    for e in effects:
        if e.kind is not EffectKind.FISHER_Z:
            raise EffectKindError(f"expected Fisher z effects, got {e.kind.value}")
    res = combine_effects(effects, model, scheme)
    lo, hi = confidence_interval(res, policy)
    return CorrelationGroup(res, fisher_z_inv(res.theta_hat), fisher_z_inv(lo), fisher_z_inv(hi))


@dataclass(frozen=True)
class GroupAnalysis:
    """Everything reported for one group analysis."""

    effects: tuple[SubjectEffect, ...]
    result: GroupResult
    test: TestResult
    heterogeneity: Optional[TestResult]
    ci: tuple[float, float]
    theta0: float
    policy: Policy


def analyze(effects: Sequence[SubjectEffect], model: Model = Model.RANDOM,
            scheme: Scheme = Scheme.INVERSE_VARIANCE, policy: Policy = Policy.Z,
            theta0: float = 0.0) -> GroupAnalysis:
    """Combine, test, and summarize heterogeneity for estimated subject effects."""
    policy = Policy(policy)
    res = combine_effects(effects, model, scheme)
    eff_policy = policy if res.S >= 2 else Policy.Z
    test = group_test(res, theta0, eff_policy)
    het = cochran_q(effects) if res.S >= 2 else None
    return GroupAnalysis(tuple(effects), res, test, het, confidence_interval(res, eff_policy),
                         float(theta0), policy)
