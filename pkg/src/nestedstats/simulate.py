"""Monte Carlo calibration and power of group-level tests on nested data.

Each replication draws ``S`` subjects. Subject ``s`` of replication ``r``
reads only the random stream ``RngState(seed).spawn(r, s)``, split further
into a parameter stream (0), a class-X sample stream (1) and a class-Y
sample stream (2). Replications are therefore independent of execution
order, and chunked or threaded runs give the same counts as a serial run.

The inner loop works on whole chunks of replications at once: samples are
laid out in ``(reps, S, n_max)`` arrays with a validity mask. The
per-subject library estimators in :mod:`nestedstats.effect` compute the
same quantities one subject at a time; the tests check that both agree.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import dist
from .combine import Z_975, pool_and_test
from .dist import GOLDEN, RngState, box_muller, f_from_uniforms, f_uniform_count, stream_uniforms
from .effect import (
    TwoSampleData,
    auc_variance_floor,
    pearson_r,
    PairedData,
    welch_test,
    wilcoxon_signed_rank,
)
from .errors import DomainError, NestedStatsError

F_D1, F_D2 = 2, 5
F_MEAN, F_VAR = dist.f_moments(F_D1, F_D2)
P_CLAMP = 1e-15


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    FSCALED = "fscaled"


class Method(str, enum.Enum):
    POOLING = "Pooling"
    NAIVE_T = "NaivePairedT"
    NAIVE_SIGNED_RANK = "NaiveSignedRank"
    SSS_FE_EQUAL = "SSS_FE_Equal"
    SSS_FE_INVVAR = "SSS_FE_InvVar"
    SSS_RE_EQUAL = "SSS_RE_Equal"
    SSS_RE_INVVAR = "SSS_RE_InvVar"
    STOUFFER = "Stouffer"
    SSS_RE_INVVAR_AUC = "SSS_RE_InvVar_AUC"


SIM1_METHODS = (
    Method.POOLING, Method.NAIVE_T, Method.SSS_FE_EQUAL, Method.SSS_FE_INVVAR,
    Method.SSS_RE_EQUAL, Method.SSS_RE_INVVAR, Method.STOUFFER,
)
SIM2_METHODS = (
    Method.SSS_RE_INVVAR, Method.SSS_RE_INVVAR_AUC, Method.NAIVE_T, Method.NAIVE_SIGNED_RANK,
)
DEFAULT_D_GRID = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)


class SimulationError(NestedStatsError):
    """A replication produced data no estimator can handle."""


@dataclass(frozen=True)
class SimConfig:
    S: int = 20
    d_grid: tuple[float, ...] = DEFAULT_D_GRID
    sigma_rand: float = 0.0
    family: Family = Family.GAUSSIAN
    n_range: tuple[int, int] = (50, 80)
    v_range: tuple[float, float] = (0.5, 2.0)
    mu_range: tuple[float, float] = (-3.0, 3.0)
    reps: int = 1000
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "d_grid", tuple(float(d) for d in self.d_grid))
        if self.S < 2:
            raise DomainError("simulation needs S >= 2 subjects")
        if self.reps < 1:
            raise DomainError("reps must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if self.sigma_rand < 0:
            raise DomainError("sigma_rand must be >= 0")
        lo, hi = self.n_range
        if not 2 <= lo <= hi:
            raise DomainError("n_range must satisfy 2 <= low <= high")
        for name in ("v_range", "mu_range"):
            a, b = getattr(self, name)
            if not a <= b:
                raise DomainError(f"{name} must satisfy low <= high")
        if self.v_range[0] <= 0:
            raise DomainError("v_range must be positive")
        if not 0 <= self.seed <= dist.MASK64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["family"] = self.family.value
        out["d_grid"] = list(self.d_grid)
        out["n_range"] = list(self.n_range)
        out["v_range"] = list(self.v_range)
        out["mu_range"] = list(self.mu_range)
        return out


@dataclass(frozen=True)
class RejectionCurve:
    method: Method
    d: tuple[float, ...]
    rates: tuple[float, ...]
    reps: int
    se: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "se", tuple(binomial_se(r, self.reps) for r in self.rates))

    def rate_at(self, d: float) -> float:
        return self.rates[self.d.index(float(d))]


def binomial_se(rate: float, reps: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / reps)


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------

PARAM_STREAM, X_STREAM, Y_STREAM = 0, 1, 2


def _fscale(f: np.ndarray, target_mean, v) -> np.ndarray:
    """Shift and scale F(2, 5) draws to the requested mean and s.d. ``v``."""
    return target_mean + (f - F_MEAN) * (v / math.sqrt(F_VAR))


def _draw_class(rng: RngState, family: Family, mean: float, v: float, n: int) -> np.ndarray:
    if family is Family.GAUSSIAN:
        return rng.normal(mean, v, size=n)
    return _fscale(rng.f(F_D1, F_D2, size=n), mean, v)


@dataclass(frozen=True)
class SubjectParams:
    d_s: float
    nx: int
    ny: int
    v: float
    mu_x: float


def _subject_params(config: SimConfig, rng: RngState, d: float) -> SubjectParams:
    p = rng.spawn(PARAM_STREAM)
    xi = p.normal(0.0, config.sigma_rand)
    nx = p.integers(*config.n_range)
    ny = p.integers(*config.n_range)
    v = p.uniform(*config.v_range)
    mu = p.uniform(*config.mu_range)
    return SubjectParams(d + xi, nx, ny, v, mu)


def gen_subject(config: SimConfig, rng: RngState, d: float) -> TwoSampleData:
    """Draw one subject's two classes from its own stream ``rng``.

    The true class means are ``mu_x`` and ``mu_x + d + xi`` with
    ``xi ~ N(0, sigma_rand^2)``; both classes have s.d. ``v``.
    """
    par = _subject_params(config, rng, d)
    x = _draw_class(rng.spawn(X_STREAM), config.family, par.mu_x, par.v, par.nx)
    y = _draw_class(rng.spawn(Y_STREAM), config.family, par.mu_x + par.d_s, par.v, par.ny)
    return TwoSampleData(x, y)


def _derive_keys(keys: np.ndarray, index) -> np.ndarray:
    """Vectorized ``dist.derive_key``."""
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        salted = idx * np.uint64(GOLDEN) + np.uint64(dist._SPAWN_SALT)
        return dist._mix64_array(np.asarray(keys, dtype=np.uint64) ^ dist._mix64_array(salted))


@dataclass
class Batch:
    """Masked sample arrays for a block of replications."""

    x: np.ndarray  # (R, S, n_max)
    y: np.ndarray
    nx: np.ndarray  # (R, S)
    ny: np.ndarray
    mask_x: np.ndarray
    mask_y: np.ndarray
    reps: np.ndarray  # replication indices

    def subject(self, i: int, s: int) -> TwoSampleData:
        return TwoSampleData(self.x[i, s, : self.nx[i, s]], self.y[i, s, : self.ny[i, s]])


def generate_batch(config: SimConfig, d: float, reps: Sequence[int]) -> Batch:
    """All subjects of replications ``reps``, identical to :func:`gen_subject`."""
    reps = np.asarray(reps, dtype=np.int64)
    root = np.uint64(RngState(config.seed).key)
    rep_keys = _derive_keys(root, reps)
    subj_keys = _derive_keys(rep_keys[:, None], np.arange(config.S)[None, :])

    u = stream_uniforms(_derive_keys(subj_keys, PARAM_STREAM), 0, 6)
    xi = 0.0 + config.sigma_rand * box_muller(u[..., 0:2])[..., 0]
    lo, hi = config.n_range
    nx = lo + np.floor(u[..., 2] * (hi - lo + 1)).astype(np.int64)
    ny = lo + np.floor(u[..., 3] * (hi - lo + 1)).astype(np.int64)
    v_lo, v_hi = config.v_range
    v = v_lo + (v_hi - v_lo) * u[..., 4]
    m_lo, m_hi = config.mu_range
    mu = m_lo + (m_hi - m_lo) * u[..., 5]
    d_s = d + xi

    n_max = hi
    xk = _derive_keys(subj_keys, X_STREAM)
    yk = _derive_keys(subj_keys, Y_STREAM)
    mean_y = (mu + d_s)[..., None]
    if config.family is Family.GAUSSIAN:
        x = mu[..., None] + v[..., None] * box_muller(stream_uniforms(xk, 0, 2 * n_max))
        y = mean_y + v[..., None] * box_muller(stream_uniforms(yk, 0, 2 * n_max))
    else:
        k = f_uniform_count(F_D1, F_D2)
        R, S = subj_keys.shape
        fx = f_from_uniforms(stream_uniforms(xk, 0, k * n_max).reshape(R, S, n_max, k), F_D1, F_D2)
        fy = f_from_uniforms(stream_uniforms(yk, 0, k * n_max).reshape(R, S, n_max, k), F_D1, F_D2)
        x = _fscale(fx, mu[..., None], v[..., None])
        y = _fscale(fy, mean_y, v[..., None])
    pos = np.arange(n_max)
    return Batch(x, y, nx, ny, pos < nx[..., None], pos < ny[..., None], reps)


# ---------------------------------------------------------------------------
# Batched statistics
# ---------------------------------------------------------------------------

def _masked_mean_var(a: np.ndarray, mask: np.ndarray, n: np.ndarray, axes) -> tuple[np.ndarray, np.ndarray]:
    mean = np.where(mask, a, 0.0).sum(axis=axes) / n
    mean_b = mean.reshape(mean.shape + (1,) * (a.ndim - mean.ndim))
    dev = np.where(mask, a - mean_b, 0.0)
    var = (dev * dev).sum(axis=axes) / (n - 1)
    return mean, var


def _two_sided_normal(z: np.ndarray) -> np.ndarray:
    return np.minimum(1.0, 2.0 * np.asarray(dist.std_normal_sf(np.abs(z))))


def _two_sided_t(t: np.ndarray, df: np.ndarray) -> np.ndarray:
    return np.minimum(1.0, 2.0 * np.asarray(dist.student_t_sf(np.abs(t), df)))


def _welch_arrays(b: Batch):
    mx, vx = _masked_mean_var(b.x, b.mask_x, b.nx, -1)
    my, vy = _masked_mean_var(b.y, b.mask_y, b.ny, -1)
    sx = vx / b.nx
    sy = vy / b.ny
    var = sx + sy
    with np.errstate(invalid="ignore", divide="ignore"):  # degenerate draws are caught by _check
        df = var * var / (sx * sx / (b.nx - 1) + sy * sy / (b.ny - 1))
    return mx - my, var, df


def _check(var: np.ndarray, b: Batch, what: str) -> None:
    bad = ~(np.isfinite(var) & (var > 0))
    if np.any(bad):
        i, s = (int(v) for v in np.argwhere(bad)[0])
        raise SimulationError(
            f"{what}: degenerate subject variance in replication {int(b.reps[i])}, subject {s}")


def _dl_tau2(theta: np.ndarray, var: np.ndarray) -> np.ndarray:
    S = theta.shape[-1]
    a = 1.0 / var
    sa = a.sum(-1)
    fe = (a * theta).sum(-1) / sa
    q = (a * (theta - fe[..., None]) ** 2).sum(-1)
    denom = sa - (a * a).sum(-1) / sa
    return np.maximum(0.0, (q - S + 1) / denom)


def _sss_p(theta: np.ndarray, var: np.ndarray, random: bool, inverse: bool, theta0: float = 0.0) -> np.ndarray:
    S = theta.shape[-1]
    tau2 = _dl_tau2(theta, var) if random else np.zeros(theta.shape[:-1])
    total = var + tau2[..., None]
    if inverse:
        a = 1.0 / total
        sa = a.sum(-1)
        est = (a * theta).sum(-1) / sa
        gvar = 1.0 / sa
    else:
        est = theta.mean(-1)
        gvar = total.sum(-1) / (S * S)
    return _two_sided_normal((est - theta0) / np.sqrt(gvar))


def _naive_t_p(theta: np.ndarray) -> np.ndarray:
    S = theta.shape[-1]
    m = theta.mean(-1)
    v = theta.var(-1, ddof=1) / S
    return _two_sided_t(m / np.sqrt(v), np.full(m.shape, S - 1.0))


def _stouffer_p(theta: np.ndarray, var: np.ndarray, df: np.ndarray) -> np.ndarray:
    t = theta / np.sqrt(var)
    p = np.clip(np.asarray(dist.student_t_sf(t, df)), P_CLAMP, 1.0 - P_CLAMP)
    z = -np.asarray(dist.std_normal_inv_cdf(p)).sum(-1) / math.sqrt(theta.shape[-1])
    return _two_sided_normal(z)


def _pooling_p(b: Batch) -> np.ndarray:
    nx = b.nx.sum(-1)
    ny = b.ny.sum(-1)
    mx, vx = _masked_mean_var(b.x, b.mask_x, nx, (-2, -1))
    my, vy = _masked_mean_var(b.y, b.mask_y, ny, (-2, -1))
    sx, sy = vx / nx, vy / ny
    var = sx + sy
    df = var * var / (sx * sx / (nx - 1) + sy * sy / (ny - 1))
    return _two_sided_t((mx - my) / np.sqrt(var), df)


def _auc_arrays(b: Batch) -> tuple[np.ndarray, np.ndarray]:
    """AUC by half-credit pair counting, with the Hanley-McNeil variance."""
    pair_mask = b.mask_x[..., :, None] & b.mask_y[..., None, :]
    xs = b.x[..., :, None]
    ys = b.y[..., None, :]
    u = ((xs > ys) & pair_mask).sum((-2, -1)) + 0.5 * ((xs == ys) & pair_mask).sum((-2, -1))
    nxny = b.nx * b.ny
    a = u / nxny
    q1 = a / (2.0 - a)
    q2 = 2.0 * a * a / (1.0 + a)
    var = (a * (1.0 - a) + (b.nx - 1) * (q1 - a * a) + (b.ny - 1) * (q2 - a * a)) / nxny
    floor = 1.0 / (nxny * (b.nx + b.ny))
    return a, np.maximum(var, floor)


def batch_pvalues(b: Batch, methods: Iterable[Method]) -> dict[Method, np.ndarray]:
    """Two-tailed group-level p-value per replication for each method."""
    methods = [Method(m) for m in methods]
    theta, var, df = _welch_arrays(b)
    _check(var, b, "mean difference")
    out: dict[Method, np.ndarray] = {}
    for m in methods:
        if m is Method.POOLING:
            out[m] = _pooling_p(b)
        elif m is Method.NAIVE_T:
            out[m] = _naive_t_p(theta)
        elif m is Method.NAIVE_SIGNED_RANK:
            out[m] = np.array([wilcoxon_signed_rank(row).p_two for row in theta])
        elif m is Method.SSS_FE_EQUAL:
            out[m] = _sss_p(theta, var, random=False, inverse=False)
        elif m is Method.SSS_FE_INVVAR:
            out[m] = _sss_p(theta, var, random=False, inverse=True)
        elif m is Method.SSS_RE_EQUAL:
            out[m] = _sss_p(theta, var, random=True, inverse=False)
        elif m is Method.SSS_RE_INVVAR:
            out[m] = _sss_p(theta, var, random=True, inverse=True)
        elif m is Method.STOUFFER:
            out[m] = _stouffer_p(theta, var, df)
        elif m is Method.SSS_RE_INVVAR_AUC:
            a, avar = _auc_arrays(b)
            _check(avar, b, "AUC")
            out[m] = _sss_p(a, avar, random=True, inverse=True, theta0=0.5)
    return out


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

def _count_chunk(config: SimConfig, d: float, methods, start: int, stop: int) -> dict[Method, int]:
    b = generate_batch(config, d, range(start, stop))
    pv = batch_pvalues(b, methods)
    return {m: int((p < config.alpha).sum()) for m, p in pv.items()}


def rejection_counts(config: SimConfig, d: float, methods: Iterable[Method],
                     workers: int = 1, chunk: int = 100) -> dict[Method, int]:
    """Number of replications in which each method rejects at ``config.alpha``."""
    methods = tuple(Method(m) for m in methods)
    bounds = [(s, min(s + chunk, config.reps)) for s in range(0, config.reps, chunk)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda ab: _count_chunk(config, d, methods, *ab), bounds))
    else:
        parts = [_count_chunk(config, d, methods, a, b) for a, b in bounds]
    return {m: sum(p[m] for p in parts) for m in methods}


def run_cell(config: SimConfig, d: float, methods: Iterable[Method] = SIM1_METHODS,
             workers: int = 1) -> dict[Method, float]:
    """Rejection rate of each method at one effect size ``d``."""
    counts = rejection_counts(config, d, methods, workers)
    return {m: c / config.reps for m, c in counts.items()}


def run_curves(config: SimConfig, methods: Iterable[Method], workers: int = 1) -> list[RejectionCurve]:
    methods = tuple(Method(m) for m in methods)
    per_d = [run_cell(config, d, methods, workers) for d in config.d_grid]
    return [RejectionCurve(m, config.d_grid, tuple(cell[m] for cell in per_d), config.reps)
            for m in methods]


@dataclass(frozen=True)
class Panel:
    name: str
    config: SimConfig
    curves: tuple[RejectionCurve, ...]

    def curve(self, method: Method) -> RejectionCurve:
        for c in self.curves:
            if c.method is Method(method):
                return c
        raise KeyError(method)


def sim1_configs(seed: int, reps: int = 1000) -> list[tuple[str, SimConfig]]:
    out = []
    for model, sigma in (("fe", 0.0), ("re", 0.2)):
        for S in (5, 20):
            out.append((f"sim1_{model}_S{S}",
                        SimConfig(S=S, sigma_rand=sigma, family=Family.GAUSSIAN, reps=reps, seed=seed)))
    return out


def sim2_configs(seed: int, reps: int = 1000) -> list[tuple[str, SimConfig]]:
    layout = (("fscaled_fe", Family.FSCALED, 0.0), ("fscaled_re", Family.FSCALED, 0.2),
              ("gaussian_re", Family.GAUSSIAN, 0.2))
    return [(f"sim2_{name}_S20", SimConfig(S=20, sigma_rand=sigma, family=fam, reps=reps, seed=seed))
            for name, fam, sigma in layout]


def run_simulation1(seed: int, reps: int = 1000, workers: int = 1) -> list[Panel]:
    """Fixed- vs random-effects data, Gaussian, S in {5, 20}."""
    return [Panel(name, cfg, tuple(run_curves(cfg, SIM1_METHODS, workers)))
            for name, cfg in sim1_configs(seed, reps)]


def run_simulation2(seed: int, reps: int = 1000, workers: int = 1) -> list[Panel]:
    """Parametric vs rank-based tests on skewed and Gaussian data, S = 20."""
    return [Panel(name, cfg, tuple(run_curves(cfg, SIM2_METHODS, workers)))
            for name, cfg in sim2_configs(seed, reps)]


# ---------------------------------------------------------------------------
# Pooling illustration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoolingDemo:
    seed: int
    offset_sd: float
    subject_welch_p: tuple[float, ...]
    pooled_welch_p: float
    subject_r: tuple[float, ...]
    subject_pearson_p: tuple[float, ...]
    pooled_r: float
    pooled_pearson_p: float
    subjects: tuple[TwoSampleData, ...] = field(repr=False, compare=False)


def _pearson_p(r: float, n: int) -> float:
    z = math.atanh(r) * math.sqrt(n - 3)
    return float(_two_sided_normal(np.asarray(z)))


def pooling_demo(seed: int, offset_sd: float = 15.0, S: int = 4, n: int = 20,
                 shift: float = 1.0, within_var: float = 4.0) -> PoolingDemo:
    """Subjects with large random offsets: each subject shows a clear X/Y
    difference that the pooled test misses, while the offsets produce a
    strong pooled X-Y correlation absent within every subject."""
    root = RngState(seed)
    sd = math.sqrt(within_var)
    subjects = []
    for s in range(S):
        rng = root.spawn(s)
        mu = rng.normal(0.0, offset_sd)
        x = rng.normal(mu - shift, sd, size=n)
        y = rng.normal(mu + shift, sd, size=n)
        subjects.append(TwoSampleData(x, y))
    welch_p = tuple(welch_test(s).p_two for s in subjects)
    rs = tuple(pearson_r(PairedData(s.x, s.y)) for s in subjects)
    xs = np.concatenate([s.x for s in subjects])
    ys = np.concatenate([s.y for s in subjects])
    pooled_r = pearson_r(PairedData(xs, ys))
    return PoolingDemo(
        seed=seed,
        offset_sd=offset_sd,
        subject_welch_p=welch_p,
        pooled_welch_p=pool_and_test(subjects).p_two,
        subject_r=rs,
        subject_pearson_p=tuple(_pearson_p(r, n) for r in rs),
        pooled_r=pooled_r,
        pooled_pearson_p=_pearson_p(pooled_r, S * n),
        subjects=tuple(subjects),
    )
