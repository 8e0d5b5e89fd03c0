"""Multilevel telescoping estimators and estimator-variance predictors.

The telescoped mean and variance over L coupled levels are sums of
per-level differences on shared draws; the standard deviation is the
square root of the telescoped variance and the scalarization is
mean + alpha * stddev. For each statistic this module predicts the
estimator variance as a function of per-level sample counts from a
:class:`LevelMomentSummary`, the frozen per-level moment kernels of a
pilot (or current) sample set. Allocation searches evaluate these
predictors at candidate counts without touching raw draws.

Per level, writing Vf/Vc for the variances of the two sample variances
and using that both are computed on the same draws,

    Var[mu2hat_f - mu2hat_c](N) = A/N + 2B/(N(N-1))

with A = mu4f - mu2f^2 + mu4c - mu2c^2 - 2K (the variance of
Zf^2 - Zc^2, hence nonnegative) and B = mu2f^2 + mu2c^2 - 2c^2
(>= (mu2f - mu2c)^2 by Cauchy-Schwarz). The summary stores unbiased
estimates of A and B clamped at zero, which keeps every per-level
predictor term nonnegative, decreasing in N, and exactly zero when the
two models coincide.

Scalarization predictors need Cov[mean, stddev] across levels; three
interchangeable treatments are provided: a global correlation bound
(PEARSON), a delta-method lift of per-level mean/variance covariance
kernels (CORRLIFT), and per-level joint bootstrap kernels (BOOTSTRAP).
Per-level covariance contributions are clipped to the per-level
Cauchy-Schwarz bound, so the PEARSON bound dominates the other two for
every summary and every count vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import moments as mo
from .moments import PowerSums
from .sampling import CoupledLevelSamples, CoupledSampleSet
from .streams import substream, uniform_block

__all__ = [
    "StatKind",
    "CovStrategy",
    "StatTarget",
    "BootstrapConfig",
    "NegativeVarianceError",
    "LevelSummary",
    "LevelMomentSummary",
    "build_summary",
    "bootstrap_cov_kernel",
    "mlmc_mean",
    "mlmc_variance",
    "mlmc_stddev",
    "mlmc_scalarization",
    "estimate_statistic",
    "summary_statistic",
    "level_mean_terms",
    "level_variance_terms",
    "level_sigma_terms",
    "level_scal_cov_terms",
    "predict_var_mean",
    "predict_var_variance",
    "predict_var_stddev",
    "predict_var_scalarization",
    "predict_variance",
]

# Threshold below which one side's variance is too degenerate to lift.
_SIGMA_FLOOR_REL = 1e-12

# Sigma denominators fall back to this fraction of the largest
# single-level variance when the telescoped estimate dips toward (or
# below) zero, as small pilots occasionally do; the single-level scale
# is the best available positive proxy for what the telescope estimates,
# and the fallback bounds the inflation of sigma predictions instead of
# letting a near-zero denominator blow them up by orders of magnitude.
_SIGMA_GUARD_FRAC = 0.25


class StatKind(str, Enum):
    MEAN = "mean"
    VARIANCE = "variance"
    STDDEV = "stddev"
    SCALARIZATION = "scalarization"


class CovStrategy(str, Enum):
    PEARSON = "pearson"
    CORRLIFT = "corrlift"
    BOOTSTRAP = "bootstrap"


class NegativeVarianceError(RuntimeError):
    """Telescoped variance estimate is negative; sqrt-based statistics fail."""


@dataclass(frozen=True)
class StatTarget:
    """Which statistic to estimate, with scalarization settings."""

    kind: StatKind
    alpha: float = 3.0
    cov_strategy: CovStrategy | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StatKind(self.kind))
        if self.cov_strategy is not None:
            object.__setattr__(self, "cov_strategy", CovStrategy(self.cov_strategy))
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.kind is StatKind.SCALARIZATION:
            if self.cov_strategy is None:
                raise ValueError("scalarization targets need a cov_strategy")
        elif self.cov_strategy is not None:
            raise ValueError(f"cov_strategy only applies to scalarization, not {self.kind.value}")


@dataclass(frozen=True)
class BootstrapConfig:
    """Joint per-level resampling settings for BOOTSTRAP covariance kernels."""

    replicates: int = 100
    stream_key: tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        if self.replicates < 2:
            raise ValueError("bootstrap needs at least 2 replicates")


@dataclass(frozen=True)
class LevelSummary:
    """Moment kernels of one coupled level, frozen at ``n`` draws.

    ``var_kernel_a``/``var_kernel_b`` are the clamped unbiased estimates
    of A and B above; ``g_fine_coarse`` is n * Cov[mean_fine, var_coarse]
    (and its mirror), the cross kernels of the CORRLIFT treatment.
    ``bootstrap_kernel`` is n * Cov[mean difference, stddev difference]
    under joint resampling, present only when a bootstrap was run.
    """

    level: int
    n: int
    cost: float
    pair_cost: float
    mean_fine: float
    mean_coarse: float
    mu2_fine: float
    mu2_coarse: float
    mu3_fine: float
    mu3_coarse: float
    mu4_fine: float
    mu4_coarse: float
    diff_var: float
    var_kernel_a: float
    var_kernel_b: float
    g_fine_coarse: float
    g_coarse_fine: float
    bootstrap_kernel: float | None = None

    @property
    def mean_diff(self) -> float:
        return self.mean_fine - self.mean_coarse

    @property
    def mu2_diff(self) -> float:
        return self.mu2_fine - self.mu2_coarse


@dataclass(frozen=True)
class LevelMomentSummary:
    """Per-level moment kernels for a whole sample set."""

    levels: tuple[LevelSummary, ...]

    def __post_init__(self) -> None:
        if not self.levels:
            raise ValueError("summary needs at least one level")
        if [ls.level for ls in self.levels] != list(range(1, len(self.levels) + 1)):
            raise ValueError("levels must be 1..L in order")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def counts(self) -> np.ndarray:
        return np.array([ls.n for ls in self.levels], dtype=int)

    @property
    def costs(self) -> np.ndarray:
        return np.array([ls.cost for ls in self.levels])

    @property
    def pair_costs(self) -> np.ndarray:
        return np.array([ls.pair_cost for ls in self.levels])

    @property
    def mean_ml(self) -> float:
        return float(sum(ls.mean_diff for ls in self.levels))

    @property
    def mu2_ml(self) -> float:
        return float(sum(ls.mu2_diff for ls in self.levels))

    @property
    def has_bootstrap(self) -> bool:
        return all(ls.bootstrap_kernel is not None for ls in self.levels)


def _summarize_level(
    samples: CoupledLevelSamples, cost: float, pair_cost: float
) -> LevelSummary:
    ps = PowerSums.from_pair(samples.fine, samples.coarse)
    ps.require(4, "level summary")
    n = ps.n
    mu2f = float(mo.sample_variance(ps, "fine"))
    mu2c = float(mo.sample_variance(ps, "coarse"))
    mu2sq_f = float(mo.variance_squared_unbiased(ps, "fine"))
    mu2sq_c = float(mo.variance_squared_unbiased(ps, "coarse"))
    khat = float(mo.centered_square_covariance(ps))
    csq = float(mo.covariance_squared_unbiased(ps))
    mu4f = float(mo.fourth_central_unbiased(ps, "fine"))
    mu4c = float(mo.fourth_central_unbiased(ps, "coarse"))
    s1 = ps.f1 - ps.c1
    s2 = ps.f2 - 2 * ps.t11 + ps.c2
    diff_var = float((s2 - s1**2 / n) / (n - 1))
    return LevelSummary(
        level=samples.level,
        n=n,
        cost=cost,
        pair_cost=pair_cost,
        mean_fine=float(mo.sample_mean(ps, "fine")),
        mean_coarse=float(mo.sample_mean(ps, "coarse")),
        mu2_fine=mu2f,
        mu2_coarse=mu2c,
        mu3_fine=float(mo.third_central_unbiased(ps, "fine")),
        mu3_coarse=float(mo.third_central_unbiased(ps, "coarse")),
        mu4_fine=mu4f,
        mu4_coarse=mu4c,
        diff_var=max(diff_var, 0.0),
        var_kernel_a=max(mu4f - mu2sq_f + mu4c - mu2sq_c - 2.0 * khat, 0.0),
        var_kernel_b=max(mu2sq_f + mu2sq_c - 2.0 * csq, 0.0),
        g_fine_coarse=float(mo.cov_mean_variance_cross(ps, "fine")) * n,
        g_coarse_fine=float(mo.cov_mean_variance_cross(ps, "coarse")) * n,
    )


def bootstrap_cov_kernel(
    samples: CoupledLevelSamples,
    replicates: int,
    stream_key: tuple[int, ...],
) -> float:
    """n * Cov[mean diff, stddev diff] under joint index resampling.

    Fine and coarse values are resampled with the same indices, keeping
    the coupling; each replicate recomputes the level's mean and stddev
    differences, and the covariance over replicates, scaled by n, is the
    level's 1/N covariance kernel.
    """
    n = samples.n
    if n < 2:
        raise ValueError("bootstrap needs at least 2 draws per level")
    if replicates < 2:
        raise ValueError("bootstrap needs at least 2 replicates")
    u = uniform_block(stream_key, 0, replicates, dim=n)
    idx = np.minimum((u * n).astype(np.int64), n - 1)
    fine = samples.fine[idx]
    coarse = samples.coarse[idx]
    d_mean = fine.mean(axis=1) - coarse.mean(axis=1)
    d_sig = np.sqrt(fine.var(axis=1, ddof=1)) - np.sqrt(coarse.var(axis=1, ddof=1))
    cov = float(np.cov(d_mean, d_sig, ddof=1)[0, 1])
    return cov * n


def build_summary(
    sample_set: CoupledSampleSet, bootstrap: BootstrapConfig | None = None
) -> LevelMomentSummary:
    """Freeze per-level moment kernels of a coupled sample set."""
    problem = sample_set.problem
    rows = []
    for lv in range(1, problem.n_levels + 1):
        row = _summarize_level(
            sample_set.level(lv), problem.costs[lv - 1], problem.pair_cost(lv)
        )
        if bootstrap is not None:
            kernel = bootstrap_cov_kernel(
                sample_set.level(lv),
                bootstrap.replicates,
                substream(bootstrap.stream_key, lv),
            )
            row = replace(row, bootstrap_kernel=kernel)
        rows.append(row)
    return LevelMomentSummary(levels=tuple(rows))


# ---------------------------------------------------------------------------
# Telescoped point estimates

def mlmc_mean(sample_set: CoupledSampleSet) -> float:
    return float(sum(lv.diff.mean() for lv in sample_set.levels))


def mlmc_variance(sample_set: CoupledSampleSet) -> float:
    return float(
        sum(lv.fine.var(ddof=1) - lv.coarse.var(ddof=1) for lv in sample_set.levels)
    )


def _sqrt_or_raise(variance: float, context: str) -> float:
    if variance < 0:
        raise NegativeVarianceError(
            f"telescoped variance estimate is negative ({variance:.6e}) in {context}"
        )
    return math.sqrt(variance)


def mlmc_stddev(sample_set: CoupledSampleSet) -> float:
    return _sqrt_or_raise(mlmc_variance(sample_set), "mlmc_stddev")


def mlmc_scalarization(sample_set: CoupledSampleSet, alpha: float = 3.0) -> float:
    return mlmc_mean(sample_set) + alpha * mlmc_stddev(sample_set)


def estimate_statistic(sample_set: CoupledSampleSet, target: StatTarget) -> float:
    """Telescoped point estimate of the targeted statistic."""
    if target.kind is StatKind.MEAN:
        return mlmc_mean(sample_set)
    if target.kind is StatKind.VARIANCE:
        return mlmc_variance(sample_set)
    if target.kind is StatKind.STDDEV:
        return mlmc_stddev(sample_set)
    return mlmc_scalarization(sample_set, target.alpha)


def summary_statistic(summary: LevelMomentSummary, target: StatTarget) -> float:
    """Same telescoped estimates, read off a frozen summary."""
    if target.kind is StatKind.MEAN:
        return summary.mean_ml
    if target.kind is StatKind.VARIANCE:
        return summary.mu2_ml
    if target.kind is StatKind.STDDEV:
        return _sqrt_or_raise(summary.mu2_ml, "summary_statistic")
    return summary.mean_ml + target.alpha * _sqrt_or_raise(
        summary.mu2_ml, "summary_statistic"
    )


# ---------------------------------------------------------------------------
# Estimator-variance predictors as functions of per-level counts

def _check_counts(summary: LevelMomentSummary, counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (summary.n_levels,):
        raise ValueError("counts must give one entry per level")
    if np.any(counts < 2):
        raise ValueError("predictors need at least 2 draws per level")
    return counts


def level_mean_terms(summary: LevelMomentSummary, counts) -> np.ndarray:
    """Per-level contributions to Var[telescoped mean]."""
    counts = _check_counts(summary, counts)
    dv = np.array([ls.diff_var for ls in summary.levels])
    return dv / counts


def level_variance_terms(summary: LevelMomentSummary, counts) -> np.ndarray:
    """Per-level contributions to Var[telescoped variance]."""
    counts = _check_counts(summary, counts)
    a = np.array([ls.var_kernel_a for ls in summary.levels])
    b = np.array([ls.var_kernel_b for ls in summary.levels])
    return a / counts + 2.0 * b / (counts * (counts - 1.0))


def _mu2_floor(summary: LevelMomentSummary) -> float:
    scale = max((ls.mu2_fine for ls in summary.levels), default=0.0)
    return max(summary.mu2_ml, _SIGMA_GUARD_FRAC * scale, float(np.finfo(float).tiny))


def predict_var_mean(summary: LevelMomentSummary, counts) -> float:
    return float(level_mean_terms(summary, counts).sum())


def predict_var_variance(summary: LevelMomentSummary, counts) -> float:
    return float(level_variance_terms(summary, counts).sum())


def predict_var_stddev(summary: LevelMomentSummary, counts) -> float:
    """Delta-method variance of the telescoped stddev: Var[var] / (4 mu2).

    The telescoped variance estimate sits in the denominator behind the
    single-level-scale guard; a zero numerator short-circuits so
    noise-free hierarchies predict zero without touching the guard.
    """
    num = predict_var_variance(summary, counts)
    if num == 0.0:
        return 0.0
    return num / (4.0 * _mu2_floor(summary))


def level_sigma_terms(summary: LevelMomentSummary, counts) -> np.ndarray:
    """Per-level contributions to the delta-method Var[telescoped stddev]."""
    terms = level_variance_terms(summary, counts)
    return terms / (4.0 * _mu2_floor(summary))


def level_scal_cov_terms(
    summary: LevelMomentSummary,
    counts,
    alpha: float,
    strategy: CovStrategy,
) -> np.ndarray:
    """Per-level Cov[mean part, alpha-weighted stddev part] contributions.

    CORRLIFT lifts the four per-level mean/variance covariance kernels to
    mean/stddev scale by the delta factor 2*sqrt(mu2 of that side);
    BOOTSTRAP divides the frozen resampling kernel by N. Both are clipped
    to the per-level Cauchy-Schwarz envelope; levels whose variances are
    too degenerate to lift fall back to the (conservative) envelope edge.
    """
    counts = _check_counts(summary, counts)
    strategy = CovStrategy(strategy)
    if strategy is CovStrategy.PEARSON:
        raise ValueError("PEARSON has no per-level covariance decomposition")
    vm = level_mean_terms(summary, counts)
    vs = level_sigma_terms(summary, counts)
    envelope = np.sqrt(vm * vs)
    floor = _SIGMA_FLOOR_REL * max((ls.mu2_fine for ls in summary.levels), default=0.0)
    out = np.empty(summary.n_levels)
    for i, ls in enumerate(summary.levels):
        n = counts[i]
        if strategy is CovStrategy.BOOTSTRAP:
            if ls.bootstrap_kernel is None:
                raise ValueError(
                    "summary has no bootstrap kernels; build it with a BootstrapConfig"
                )
            cov = ls.bootstrap_kernel / n
        else:
            ok_f = ls.mu2_fine > floor
            ok_c = ls.mu2_coarse > floor
            if ls.level == 1:
                if ok_f:
                    sf = math.sqrt(ls.mu2_fine)
                    cov = ls.mu3_fine / (2.0 * sf) / n
                else:
                    cov = math.copysign(envelope[i], alpha)
            elif ok_f and ok_c:
                sf = math.sqrt(ls.mu2_fine)
                sc = math.sqrt(ls.mu2_coarse)
                kern = (
                    ls.mu3_fine / (2.0 * sf)
                    - ls.g_fine_coarse / (2.0 * sc)
                    - ls.g_coarse_fine / (2.0 * sf)
                    + ls.mu3_coarse / (2.0 * sc)
                )
                cov = kern / n
            else:
                cov = math.copysign(envelope[i], alpha)
        out[i] = min(max(cov, -envelope[i]), envelope[i])
    return out


def predict_var_scalarization(
    summary: LevelMomentSummary,
    counts,
    alpha: float = 3.0,
    strategy: CovStrategy = CovStrategy.PEARSON,
) -> float:
    """Predicted Var[mean + alpha * stddev] at the given counts.

    PEARSON bounds the covariance globally by +|alpha| sqrt(Vm * Vs);
    the per-level strategies add 2*alpha*cov_l with clipped per-level
    covariances, so their prediction never exceeds PEARSON's.
    """
    strategy = CovStrategy(strategy)
    vm = predict_var_mean(summary, counts)
    vs = predict_var_stddev(summary, counts)
    if strategy is CovStrategy.PEARSON:
        return vm + alpha**2 * vs + 2.0 * abs(alpha) * math.sqrt(vm * vs)
    cov = level_scal_cov_terms(summary, counts, alpha, strategy)
    return vm + alpha**2 * vs + 2.0 * alpha * float(cov.sum())


def predict_variance(
    summary: LevelMomentSummary, counts, target: StatTarget
) -> float:
    """Predictor dispatch on the targeted statistic."""
    if target.kind is StatKind.MEAN:
        return predict_var_mean(summary, counts)
    if target.kind is StatKind.VARIANCE:
        return predict_var_variance(summary, counts)
    if target.kind is StatKind.STDDEV:
        return predict_var_stddev(summary, counts)
    return predict_var_scalarization(
        summary, counts, target.alpha, target.cov_strategy
    )
