import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nestedstats import effect as ef
from nestedstats.dist import RngState
from nestedstats.effect import EffectKind, PairedData, RegressionData, SubjectEffect, TestResult, TwoSampleData
from nestedstats.errors import (
    DegenerateDataError,
    DomainError,
    InsufficientDataError,
    ShapeError,
    SingularDesignError,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
small_ints = st.integers(-4, 4).map(float)  # produces many ties


def vec(elements, lo=2, hi=30):
    return st.lists(elements, min_size=lo, max_size=hi).map(np.array)


# -- types -------------------------------------------------------------------

def test_subject_effect_validation():
    with pytest.raises(DomainError):
        SubjectEffect(0.0, -1.0, EffectKind.MEAN, (3,))
    with pytest.raises(DomainError):
        SubjectEffect(1.2, 0.1, EffectKind.AUC, (3, 3))
    with pytest.raises(DomainError):
        SubjectEffect(math.inf, 0.1, EffectKind.FISHER_Z, (5,))
    e = SubjectEffect(0.3, 0.1, EffectKind.MEAN, (4,)).with_id("a")
    assert e.subject_id == "a"


@given(st.floats(-40, 40), st.floats(0.5, 300))
def test_test_result_invariants(stat, df):
    for r in (TestResult.normal(stat), TestResult.student_t(stat, df)):
        assert r.p_one_low + r.p_one_high == pytest.approx(1.0, abs=1e-12)
        assert r.p_two == pytest.approx(min(1.0, 2 * min(r.p_one_low, r.p_one_high)), abs=1e-15)
        assert 0.0 <= r.p_two <= 1.0


def test_data_shapes():
    with pytest.raises(ShapeError):
        PairedData(np.ones(3), np.ones(4))
    with pytest.raises(InsufficientDataError):
        TwoSampleData(np.array([]), np.ones(3))
    with pytest.raises(InsufficientDataError):
        RegressionData(np.ones((2, 1)), np.ones(2))


# -- means and t ---------------------------------------------------------------

def test_mean_effect_examples():
    e = ef.mean_effect([1, 2, 3])
    assert (e.theta_hat, e.df) == (2.0, 2)
    assert e.var_hat == pytest.approx(1 / 3, abs=1e-15)
    c = ef.mean_effect([5, 5, 5, 5])
    assert (c.theta_hat, c.var_hat) == (5.0, 0.0)
    with pytest.raises(InsufficientDataError):
        ef.mean_effect([1.0])


@given(vec(finite), st.floats(-100, 100))
def test_mean_effect_translation(x, c):
    a, b = ef.mean_effect(x), ef.mean_effect(x + c)
    assert b.theta_hat == pytest.approx(a.theta_hat + c, abs=1e-9)
    assert b.var_hat == pytest.approx(a.var_hat, rel=1e-6, abs=1e-9)
    assert a.var_hat >= 0


def test_one_sample_t_examples():
    r = ef.one_sample_t([1, 2, 3], 0.0)
    assert r.statistic == pytest.approx(2 / math.sqrt(1 / 3), abs=1e-12)
    assert r.statistic == pytest.approx(3.464, abs=1e-3)
    assert (r.dist, r.df) == ("t", 2)
    z = ef.one_sample_t([1, 2, 3], 2.0)
    assert z.statistic == 0.0 and z.p_two == 1.0
    with pytest.raises(DegenerateDataError):
        ef.one_sample_t([4, 4, 4], 0.0)


@given(vec(st.floats(-50, 50), lo=3), st.floats(-20, 20))
def test_one_sample_t_sign_flip(x, theta0):
    assume(np.ptp(x) > 1e-3)
    a = ef.one_sample_t(x, theta0)
    b = ef.one_sample_t(2 * theta0 - x, theta0)
    assert b.statistic == pytest.approx(-a.statistic, rel=1e-9, abs=1e-9)
    assert b.p_two == pytest.approx(a.p_two, abs=1e-9)


@given(vec(st.floats(-50, 50), lo=3), st.floats(-20, 20),
       st.floats(0.1, 10) | st.floats(-10, -0.1), st.floats(-100, 100))
@settings(max_examples=60)
def test_one_sample_t_affine_invariance(x, theta0, a, b):
    assume(np.ptp(x) > 1e-2)
    p1 = ef.one_sample_t(x, theta0).p_two
    p2 = ef.one_sample_t(a * x + b, a * theta0 + b).p_two
    assert p2 == pytest.approx(p1, rel=1e-6, abs=1e-9)


def test_paired_examples():
    e = ef.paired_diff_effect(PairedData(np.array([2.0, 4.0]), np.array([1.0, 3.0])))
    assert (e.theta_hat, e.var_hat, e.kind) == (1.0, 0.0, EffectKind.PAIRED_DIFF)
    same = np.array([1.0, 5.0, 2.0])
    assert ef.paired_diff_effect(PairedData(same, same)).theta_hat == 0.0


@given(st.integers(2, 40).flatmap(lambda n: st.tuples(
    arrays(float, n, elements=finite), arrays(float, n, elements=finite))))
def test_paired_reduces_to_mean_of_diffs(xy):
    x, y = xy
    a = ef.paired_diff_effect(PairedData(x, y))
    b = ef.mean_effect(x - y)
    assert (a.theta_hat, a.var_hat, a.df) == (b.theta_hat, b.var_hat, b.df)


def test_welch_examples():
    e = ef.welch_diff_effect(TwoSampleData(np.array([1.0, 2, 3]), np.array([1.0, 2, 3])))
    assert e.theta_hat == 0.0
    # unbiased variance of [1, 2, 3] is 1, so var_hat = 1/3 + 1/3
    assert e.var_hat == pytest.approx(2 / 3, abs=1e-15)
    # equal variances and sizes: df = 2(n - 1)
    x = np.array([0.0, 1, 2, 3, 4])
    e = ef.welch_diff_effect(TwoSampleData(x, x[::-1] * 1.0 + 7))
    assert e.df == pytest.approx(8.0, abs=1e-12)
    with pytest.raises(InsufficientDataError):
        ef.welch_diff_effect(TwoSampleData(np.array([1.0]), x))


@given(vec(finite), vec(finite))
def test_welch_composition_and_antisymmetry(x, y):
    e = ef.welch_diff_effect(TwoSampleData(x, y))
    mx, my = ef.mean_effect(x), ef.mean_effect(y)
    assert e.theta_hat == mx.theta_hat - my.theta_hat
    assert e.var_hat == mx.var_hat + my.var_hat
    s = ef.welch_diff_effect(TwoSampleData(y, x))
    assert s.theta_hat == -e.theta_hat
    assert s.var_hat == e.var_hat
    assert s.df == pytest.approx(e.df, rel=1e-12)


def test_welch_df_satterthwaite_oracle():
    x = np.array([3.1, 2.2, 5.0, 4.4, 3.9, 1.0])
    y = np.array([7.7, 9.1, 6.3, 12.2])
    vx, vy = Fraction(float(x.var(ddof=1))) / 6, Fraction(float(y.var(ddof=1))) / 4
    df = (vx + vy) ** 2 / (vx ** 2 / 5 + vy ** 2 / 3)
    assert ef.welch_diff_effect(TwoSampleData(x, y)).df == pytest.approx(float(df), rel=1e-13)


# -- ranks and AUC -------------------------------------------------------------

def test_midranks_examples():
    assert ef.midranks([10, 20, 30]).tolist() == [1, 2, 3]
    assert ef.midranks([5, 5]).tolist() == [1.5, 1.5]
    assert ef.midranks([3, 1, 3, 2, 3]).tolist() == [4, 1, 4, 2, 4]


@given(vec(small_ints, lo=1), st.randoms(use_true_random=False))
def test_midranks_sum_and_permutation(x, rnd):
    r = ef.midranks(x)
    assert r.sum() == x.size * (x.size + 1) / 2
    perm = list(range(x.size))
    rnd.shuffle(perm)
    assert np.array_equal(ef.midranks(x[perm]), r[perm])


def brute_auc(x, y):
    credit = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in x for b in y)
    return credit / (len(x) * len(y))


def test_auc_equals_pair_counting_exactly():
    rng = RngState(2024)
    for _ in range(1000):
        nx, ny = rng.integers(1, 12), rng.integers(1, 12)
        x = rng.integers(0, 6, size=nx).astype(float)
        y = rng.integers(0, 6, size=ny).astype(float)
        assert ef.auc_effect(TwoSampleData(x, y)).theta_hat == brute_auc(x, y)


def test_auc_examples():
    e = ef.auc_effect(TwoSampleData(np.array([1.0, 3, 5]), np.array([2.0, 4])))
    assert e.theta_hat == 0.5 and e.kind is EffectKind.AUC and e.n == (3, 2)
    top = ef.auc_effect(TwoSampleData(np.array([5.0, 6, 7]), np.array([1.0, 2])))
    assert top.theta_hat == 1.0
    assert top.var_hat == ef.auc_variance_floor(3, 2) == 1 / (3 * 2 * 5)
    with pytest.raises(InsufficientDataError):
        ef.auc_effect(TwoSampleData(np.array([]), np.array([1.0])))


def test_hanley_mcneil_formula():
    a, nx, ny = 0.7, 10, 14
    q1, q2 = a / (2 - a), 2 * a * a / (1 + a)
    ref = (a * (1 - a) + (nx - 1) * (q1 - a * a) + (ny - 1) * (q2 - a * a)) / (nx * ny)
    assert ef.hanley_mcneil_variance(a, nx, ny) == pytest.approx(ref, rel=1e-14)


@given(vec(small_ints, lo=1, hi=12), vec(small_ints, lo=1, hi=12))
def test_auc_label_swap_and_bounds(x, y):
    a = ef.auc_effect(TwoSampleData(x, y))
    b = ef.auc_effect(TwoSampleData(y, x))
    assert a.theta_hat + b.theta_hat == 1.0
    assert 0 <= a.theta_hat <= 1 and a.var_hat > 0


def test_auc_null_moments_on_u_scale():
    # for N_X = N_Y = 10: E(U) = 50, Var(U) = N_X N_Y (N_X + N_Y + 1) / 12 = 175
    assert ef.auc_null_variance(10, 10) * 100 ** 2 == pytest.approx(175.0, rel=1e-14)
    x = np.arange(10.0)
    t = ef.auc_null_test(TwoSampleData(x, x + 0.0))
    assert t.statistic == 0.0 and t.p_two == 1.0


def test_auc_null_permutation_oracle():
    data = RngState(5).normal(size=30)
    nx = 14
    gen = np.random.default_rng(7)  # permutation oracle independent of the library's RNG
    perms = np.argsort(gen.random((100_000, 30)), axis=1)
    pooled = data[perms]
    ranks = np.argsort(np.argsort(pooled, axis=1), axis=1) + 1.0  # no ties in continuous data
    u = ranks[:, :nx].sum(axis=1) - nx * (nx + 1) / 2
    z = (u / (nx * 16) - 0.5) / math.sqrt(ef.auc_null_variance(nx, 16))
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1) < 0.02
    for k in range(20):  # the library agrees with the oracle's statistic on sampled permutations
        x, y = pooled[k, :nx], pooled[k, nx:]
        assert ef.auc_null_test(TwoSampleData(x, y)).statistic == pytest.approx(z[k], abs=1e-12)


# -- signed rank ------------------------------------------------------------

def test_signed_rank_examples():
    r = ef.wilcoxon_signed_rank([-2, -1, 1, 2])
    assert r.statistic == 5.0 and r.p_two == 1.0
    r = ef.wilcoxon_signed_rank([1, 2, 3, 4, 5])
    assert r.statistic == 15.0
    # (15 - 7.5) / sqrt(5 * 6 * 11 / 24)
    assert ef.signed_rank_z(15, 5) == pytest.approx(7.5 / math.sqrt(13.75), rel=1e-14)
    others = [ef.wilcoxon_signed_rank(np.array(s) * np.arange(1, 6)).p_one_high
              for s in itertools.product([-1, 1], repeat=5)]
    assert r.p_one_high == min(others)
    with pytest.raises(DegenerateDataError):
        ef.wilcoxon_signed_rank([0, 0, 0])


def test_signed_rank_drops_zeros():
    a = ef.wilcoxon_signed_rank([0.0, 1.0, -2.0, 3.0])
    b = ef.wilcoxon_signed_rank([1.0, -2.0, 3.0])
    assert a == b


def exact_signed_rank_p_two(d):
    """Two-sided p from all 2^n sign patterns applied to the observed magnitudes."""
    d = np.asarray(d)
    ranks = ef.midranks(np.abs(d))
    mean = ranks.sum() / 2
    obs = abs(ranks[d > 0].sum() - mean)
    count = 0
    for signs in itertools.product((0, 1), repeat=d.size):
        w = float(np.dot(signs, ranks))
        count += abs(w - mean) >= obs - 1e-12
    return count / 2 ** d.size


def test_exact_oracle_sanity():
    assert exact_signed_rank_p_two([1, 2, 3, 4, 5, 6]) == 2 / 64
    assert exact_signed_rank_p_two([-1, 1]) == 1.0


def test_signed_rank_agrees_with_t_test_decision():
    rng = RngState(60)
    agree = 0
    for i in range(300):
        d = rng.spawn(i).normal(0.5, 1.0, size=60)
        agree += ef.wilcoxon_signed_rank(d).rejects(0.05) == ef.one_sample_t(d).rejects(0.05)
    assert agree / 300 >= 0.8


# -- correlation ------------------------------------------------------------

def test_fisher_z_examples():
    assert ef.fisher_z(0.0) == 0.0
    assert ef.fisher_z(0.5) == pytest.approx(0.549306, abs=1e-6)
    assert ef.fisher_z(-0.3) == -ef.fisher_z(0.3)
    for bad in (1.0, -1.0, 1.5):
        with pytest.raises(DomainError):
            ef.fisher_z(bad)


@given(st.floats(-0.999999, 0.999999))
def test_fisher_round_trip(r):
    assert ef.fisher_z_inv(ef.fisher_z(r)) == pytest.approx(r, abs=1e-12)


def test_pearson_examples():
    e = ef.pearson_effect(PairedData(np.array([1.0, 2, 3, 4]), np.array([1.0, 3, 2, 4])))
    assert ef.fisher_z_inv(e.theta_hat) == pytest.approx(0.8, abs=1e-12)
    assert e.theta_hat == pytest.approx(1.0986, abs=1e-4)
    assert e.var_hat == 1.0 and e.kind is EffectKind.FISHER_Z
    x = np.array([1.0, 2, 3, 4])
    with pytest.raises(DegenerateDataError):
        ef.pearson_effect(PairedData(x, -x))
    with pytest.raises(DegenerateDataError):
        ef.pearson_effect(PairedData(x, np.full(4, 2.0)))
    with pytest.raises(InsufficientDataError):
        ef.pearson_effect(PairedData(x[:3], x[:3] ** 2))


def pearson_oracle(x, y):
    x = [Fraction(v) for v in x]
    y = [Fraction(v) for v in y]
    mx, my = sum(x) / len(x), sum(y) / len(y)
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return float(sxy) / math.sqrt(float(sxx) * float(syy))


@given(st.integers(4, 30).flatmap(lambda n: st.tuples(
    arrays(float, n, elements=st.floats(-100, 100)), arrays(float, n, elements=st.floats(-100, 100)))),
    st.floats(0.1, 10), st.floats(0.1, 10), st.floats(-50, 50))
@settings(max_examples=80)
def test_pearson_back_transform_and_scale_invariance(xy, a, b, c):
    x, y = xy
    assume(np.ptp(x) > 1e-3 and np.ptp(y) > 1e-3)
    rho = pearson_oracle(x, y)
    assume(abs(rho) < 0.999)
    e = ef.pearson_effect(PairedData(x, y))
    assert ef.fisher_z_inv(e.theta_hat) == pytest.approx(rho, abs=1e-12)
    f = ef.pearson_effect(PairedData(a * x + c, b * y - c))
    assert f.theta_hat == pytest.approx(e.theta_hat, abs=1e-9)


def test_r_squared():
    assert ef.r_squared(0.0) == 0.0
    assert ef.r_squared(-0.5) == 0.25
    assert ef.r_squared(1.0) == 1.0
    with pytest.raises(DomainError):
        ef.r_squared(1.2)


# -- OLS -------------------------------------------------------------------

def solve_exact(A, b):
    """Gauss-Jordan elimination over the rationals."""
    n = len(A)
    M = [list(row) + [rhs] for row, rhs in zip(A, b)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col] / M[col][col]
                M[r] = [u - f * v for u, v in zip(M[r], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]


def ols_oracle(X, y):
    rows = [[Fraction(1)] + [Fraction(v) for v in r] for r in X]
    ys = [Fraction(v) for v in y]
    p = len(rows[0])
    xtx = [[sum(r[i] * r[j] for r in rows) for j in range(p)] for i in range(p)]
    xty = [sum(r[i] * t for r, t in zip(rows, ys)) for i in range(p)]
    beta = solve_exact(xtx, xty)
    resid = [t - sum(b * v for b, v in zip(beta, r)) for r, t in zip(rows, ys)]
    sigma2 = sum(e * e for e in resid) / (len(rows) - p)
    inv_cols = [solve_exact(xtx, [Fraction(int(i == j)) for i in range(p)]) for j in range(p)]
    cov_diag = [sigma2 * inv_cols[k][k] for k in range(p)]
    return [float(b) for b in beta], float(sigma2), [float(c) for c in cov_diag]


def derived_design():
    rng = RngState(40)
    X = rng.normal(size=120).reshape(40, 3)
    y = 1.5 + X @ np.array([2.0, -1.0, 0.5]) + rng.normal(0, 0.7, size=40)
    return X, y


def test_ols_against_exact_normal_equations():
    X, y = derived_design()
    fit = ef.ols_fit(RegressionData(X, y))
    beta, sigma2, cov_diag = ols_oracle(X, y)
    np.testing.assert_allclose(fit.beta_hat, beta, atol=1e-10)
    assert fit.sigma2_eta == pytest.approx(sigma2, rel=1e-10)
    assert fit.df == 36 and fit.n == 40
    np.testing.assert_allclose(np.diag(fit.coef_cov), cov_diag, rtol=1e-10)
    for k in range(4):
        e = ef.ols_coef_effect(fit, k)
        assert e.kind is EffectKind.OLS_COEF and e.df == 36
        assert e.theta_hat / math.sqrt(e.var_hat) == pytest.approx(beta[k] / math.sqrt(cov_diag[k]), rel=1e-9)


def test_ols_noiseless_line():
    x = np.array([[0.0], [1], [2], [3]])
    fit = ef.ols_fit(RegressionData(x, 3 + 2 * x[:, 0]))
    np.testing.assert_allclose(fit.beta_hat, [3, 2], atol=1e-12)
    assert fit.sigma2_eta == pytest.approx(0.0, abs=1e-25)
    assert ef.ols_coef_effect(fit, 1).var_hat == pytest.approx(0.0, abs=1e-25)


def test_ols_intercept_only_reduces_to_mean():
    # a regressor of zeros is not allowed (rank deficient); compare through a centered dummy instead
    y = RngState(3).normal(size=11)
    x = np.arange(11.0) - 5.0
    fit = ef.ols_fit(RegressionData(x[:, None], y))
    assert fit.beta_hat[0] == pytest.approx(y.mean(), abs=1e-12)


def test_ols_column_scaling():
    X, y = derived_design()
    base = ef.ols_coef_effect(ef.ols_fit(RegressionData(X, y)), 2)
    Xs = X.copy()
    Xs[:, 1] *= 4.0
    scaled = ef.ols_coef_effect(ef.ols_fit(RegressionData(Xs, y)), 2)
    assert scaled.theta_hat == pytest.approx(base.theta_hat / 4, rel=1e-12)
    assert scaled.var_hat == pytest.approx(base.var_hat / 16, rel=1e-10)


def test_ols_errors():
    x = np.arange(6.0)
    with pytest.raises(SingularDesignError):
        ef.ols_fit(RegressionData(np.column_stack([x, 2 * x]), x))
    with pytest.raises(InsufficientDataError):
        RegressionData(np.ones((3, 2)), np.ones(3))
    fit = ef.ols_fit(RegressionData(x[:, None], x ** 2))
    with pytest.raises(IndexError):
        ef.ols_coef_effect(fit, 2)


# -- bootstrap ----------------------------------------------------------------

def test_bootstrap_variance():
    x = RngState(8).normal(0, 2, size=200)
    assert ef.bootstrap_variance(x, lambda s: 1.0, 50, RngState(1)) == 0.0
    v = ef.bootstrap_variance(x, np.mean, 2000, RngState(1))
    assert abs(v / (x.var(ddof=1) / 200) - 1) < 0.25
    assert v == ef.bootstrap_variance(x, np.mean, 2000, RngState(1))
    with pytest.raises(DomainError):
        ef.bootstrap_variance(x, np.mean, 1, RngState(1))


# -- variance fuzz ------------------------------------------------------------

@given(vec(finite, lo=4, hi=25), vec(finite, lo=4, hi=25))
@settings(max_examples=80)
def test_all_variances_nonnegative(x, y):
    assert ef.mean_effect(x).var_hat >= 0
    assert ef.welch_diff_effect(TwoSampleData(x, y)).var_hat >= 0
    assert ef.auc_effect(TwoSampleData(x, y)).var_hat > 0
    n = min(x.size, y.size)
    assert ef.paired_diff_effect(PairedData(x[:n], y[:n])).var_hat >= 0
    try:
        assert ef.pearson_effect(PairedData(x[:n], y[:n])).var_hat > 0
    except DegenerateDataError:
        pass
