"""Group-level statistical inference for nested (subject-within-group) data."""

__version__ = "0.1.0"

from .combine import (
    GroupResult,
    Model,
    Policy,
    Scheme,
    analyze,
    cochran_q,
    combine_effects,
    correlation_group,
    dl_tau_squared,
    group_test,
    naive_summary_test,
    pool_and_test,
    stouffer_combine,
    weights,
)
from .dist import RngState
from .effect import (
    EffectKind,
    PairedData,
    RegressionData,
    SubjectEffect,
    TestResult,
    TwoSampleData,
    auc_effect,
    auc_null_test,
    bootstrap_variance,
    fisher_z,
    fisher_z_inv,
    mean_effect,
    midranks,
    ols_coef_effect,
    ols_fit,
    one_sample_t,
    paired_diff_effect,
    pearson_effect,
    r_squared,
    welch_diff_effect,
    wilcoxon_signed_rank,
)
