"""Per-level sample allocation against an estimator-variance target.

Three allocators choose per-level counts N_l minimizing predicted cost
sum_l C_l N_l subject to predicted estimator variance <= epsilon^2:

* ``analytic_mean``: the closed form for the telescoped mean, whose
  variance is exactly sum_l V_l / N_l. With lambda =
  sum_l sqrt(V_l C_l) / eps^2, the real-valued optimum is
  N_l = lambda * sqrt(V_l / C_l), rounded up.
* ``aa``: the same closed form applied to any statistic by freezing
  effective per-level variance kernels V_l = (per-level predictor
  contribution at the summary's own counts) * n_l. Exact for the mean;
  an approximation wherever the predictor is not a pure sum of V_l/N_l.
* ``opt``: numerical minimization in t = log N with an exterior penalty
  on the variance constraint and a compact downhill simplex, seeded from
  ``aa``; keeps the seed's counts unless strictly cheaper.

Every allocator finishes with integer round-up, a per-level floor, and a
scale-up repair loop until the *actual* predictor meets the target, so
``Allocation.predicted_variance <= epsilon_sq`` always holds on return.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .mlmc import (
    BootstrapConfig,
    CovStrategy,
    LevelMomentSummary,
    StatKind,
    StatTarget,
    build_summary,
    level_mean_terms,
    level_scal_cov_terms,
    level_variance_terms,
    level_sigma_terms,
    predict_variance,
    summary_statistic,
)
from .problems import MultilevelProblem
from .sampling import CoupledSampleSet, new_sample_set
from .streams import substream

__all__ = [
    "Allocator",
    "AllocationTarget",
    "Allocation",
    "EstimateWithError",
    "BudgetExceededError",
    "allocate_mean_analytic",
    "allocate_analytic_approximation",
    "allocate_numerical",
    "allocate",
    "iterate_allocation",
]


class Allocator(str, Enum):
    ANALYTIC_MEAN = "analytic_mean"
    AA = "aa"
    OPT = "opt"


class BudgetExceededError(RuntimeError):
    """Projected sampling cost exceeds the target's max_cost."""


@dataclass(frozen=True)
class AllocationTarget:
    """Statistic, accuracy, and guardrails for an allocation search."""

    target: StatTarget
    epsilon_sq: float
    min_per_level: int = 10
    max_cost: float | None = None

    def __post_init__(self) -> None:
        if not (self.epsilon_sq > 0 and math.isfinite(self.epsilon_sq)):
            raise ValueError("epsilon_sq must be positive and finite")
        if self.min_per_level < 4:
            raise ValueError("min_per_level must be at least 4 (moment kernels need 4 draws)")
        if self.max_cost is not None and self.max_cost <= 0:
            raise ValueError("max_cost must be positive")


@dataclass(frozen=True)
class Allocation:
    """Chosen per-level counts with the predictor values that justified them.

    ``predicted_cost`` is the allocation objective sum_l C_l N_l (single
    model per level); the coupled-pair spending ledger lives on
    :class:`EstimateWithError`.
    """

    counts: tuple[int, ...]
    predicted_variance: float
    predicted_cost: float
    solver: str
    lagrange_lambda: float | None = None
    iterations_used: int | None = None


@dataclass(frozen=True)
class EstimateWithError:
    """A telescoped estimate with its predicted error and actual spend.

    ``cost_spent`` charges both models of each coupled pair:
    sum_l (C_l + C_{l-1}) N_l with C_0 = 0.
    """

    value: float
    est_variance: float
    std_error: float
    cost_spent: float
    counts: tuple[int, ...]


def _predicted_cost(summary: LevelMomentSummary, counts: np.ndarray) -> float:
    return float(np.dot(summary.costs, counts))


# Counts beyond this are unusable in practice; clipping keeps the integer
# arithmetic exact (well below 2**53) when garbage kernels ask for more.
_COUNT_CAP = 10**15


def _repair(
    summary: LevelMomentSummary,
    counts: np.ndarray,
    target: AllocationTarget,
) -> np.ndarray:
    """Scale counts up until the actual predictor meets epsilon^2."""
    counts = counts.astype(int)
    for attempt in range(64):
        v = predict_variance(summary, counts, target.target)
        if v <= target.epsilon_sq or np.all(counts >= _COUNT_CAP):
            return counts
        ratio = min(v / target.epsilon_sq, float(_COUNT_CAP))
        if attempt > 0:
            # the predictor is at worst O(1/N), so a second pass means
            # some levels are pinned; force geometric progress
            ratio = max(ratio, 1.5)
        scaled = np.minimum(np.ceil(counts * ratio), float(_COUNT_CAP))
        counts = np.maximum(scaled.astype(int), counts + 1)
    raise RuntimeError("allocation repair failed to reach the variance target")


def _giles(
    kernels: np.ndarray, costs: np.ndarray, eps_sq: float, n_min: int
) -> tuple[np.ndarray, float]:
    lam = float(np.sum(np.sqrt(kernels * costs))) / eps_sq
    with np.errstate(divide="ignore", invalid="ignore"):
        n_real = lam * np.sqrt(kernels / costs)
    n_real = np.where(np.isfinite(n_real), n_real, 0.0)
    n_real = np.minimum(n_real, float(_COUNT_CAP))
    counts = np.maximum(np.ceil(n_real).astype(int), n_min)
    return counts, lam


def allocate_mean_analytic(
    summary: LevelMomentSummary, target: AllocationTarget
) -> Allocation:
    """Closed-form optimal counts for the telescoped mean."""
    if target.target.kind is not StatKind.MEAN:
        raise ValueError("allocate_mean_analytic only handles MEAN targets")
    kernels = np.array([ls.diff_var for ls in summary.levels])
    counts, lam = _giles(kernels, summary.costs, target.epsilon_sq, target.min_per_level)
    counts = _repair(summary, counts, target)
    return Allocation(
        counts=tuple(int(c) for c in counts),
        predicted_variance=predict_variance(summary, counts, target.target),
        predicted_cost=_predicted_cost(summary, counts),
        solver=Allocator.ANALYTIC_MEAN.value,
        lagrange_lambda=lam,
    )


def _aa_kernels(summary: LevelMomentSummary, target: AllocationTarget) -> np.ndarray:
    """Effective per-level variance kernels frozen at the summary's counts.

    V_l is defined so the per-level predictor contribution at the
    summary's own counts equals V_l / n_l; plugging these into the
    closed form is exact for MEAN and a freeze-and-solve approximation
    otherwise. PEARSON's global cross term has no per-level split, so
    its kernel uses the per-level bound
    (sqrt(Vmean_l) + |alpha| sqrt(Vsigma_l))^2.
    """
    stat = target.target
    n = summary.counts
    if stat.kind is StatKind.MEAN:
        return np.array([ls.diff_var for ls in summary.levels])
    if stat.kind is StatKind.VARIANCE:
        return level_variance_terms(summary, n) * n
    if stat.kind is StatKind.STDDEV:
        return level_sigma_terms(summary, n) * n
    vm = level_mean_terms(summary, n)
    vs = level_sigma_terms(summary, n)
    if stat.cov_strategy is CovStrategy.PEARSON:
        return (np.sqrt(vm) + abs(stat.alpha) * np.sqrt(vs)) ** 2 * n
    cov = level_scal_cov_terms(summary, n, stat.alpha, stat.cov_strategy)
    return (vm + stat.alpha**2 * vs + 2.0 * stat.alpha * cov) * n


def allocate_analytic_approximation(
    summary: LevelMomentSummary, target: AllocationTarget
) -> Allocation:
    """Closed-form allocation on frozen per-level kernels, then repaired."""
    kernels = _aa_kernels(summary, target)
    counts, lam = _giles(kernels, summary.costs, target.epsilon_sq, target.min_per_level)
    counts = _repair(summary, counts, target)
    return Allocation(
        counts=tuple(int(c) for c in counts),
        predicted_variance=predict_variance(summary, counts, target.target),
        predicted_cost=_predicted_cost(summary, counts),
        solver=Allocator.AA.value,
        lagrange_lambda=lam,
    )


def _nelder_mead(f, x0: np.ndarray, step: float, max_iter: int, ftol: float) -> np.ndarray:
    """Compact downhill simplex over plain float vectors."""
    d = len(x0)
    simplex = [np.array(x0, float)]
    for i in range(d):
        v = np.array(x0, float)
        v[i] += step
        simplex.append(v)
    fvals = [f(v) for v in simplex]
    for _ in range(max_iter):
        order = np.argsort(fvals)
        simplex = [simplex[i] for i in order]
        fvals = [fvals[i] for i in order]
        if abs(fvals[-1] - fvals[0]) <= ftol * (abs(fvals[0]) + 1e-12):
            break
        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        refl = centroid + (centroid - worst)
        f_refl = f(refl)
        if f_refl < fvals[0]:
            exp_ = centroid + 2.0 * (centroid - worst)
            f_exp = f(exp_)
            if f_exp < f_refl:
                simplex[-1], fvals[-1] = exp_, f_exp
            else:
                simplex[-1], fvals[-1] = refl, f_refl
        elif f_refl < fvals[-2]:
            simplex[-1], fvals[-1] = refl, f_refl
        else:
            contr = centroid + 0.5 * (worst - centroid)
            f_contr = f(contr)
            if f_contr < fvals[-1]:
                simplex[-1], fvals[-1] = contr, f_contr
            else:
                best = simplex[0]
                simplex = [best] + [best + 0.5 * (v - best) for v in simplex[1:]]
                fvals = [fvals[0]] + [f(v) for v in simplex[1:]]
    i = int(np.argmin(fvals))
    return simplex[i]


# Integer round-up leaves slack the simplex can harvest a few samples at
# a time, but savings inside the moment kernels' own sampling noise are
# not meaningful; below this relative margin the seed's counts win.
_KEEP_SEED_REL = 0.005


def allocate_numerical(
    summary: LevelMomentSummary,
    target: AllocationTarget,
    init: Allocation | None = None,
) -> Allocation:
    """Penalty-method count optimization in log space, seeded from ``aa``.

    Sweeps the penalty weight upward so the variance constraint tightens
    toward an exterior-penalty optimum, polishes with a smaller simplex,
    then rounds up and repairs. The seed allocation's counts are kept
    unless the optimized ones are cheaper by a meaningful margin.
    """
    seed = init if init is not None else allocate_analytic_approximation(summary, target)
    costs = summary.costs
    eps_sq = target.epsilon_sq
    n_min = float(target.min_per_level)
    cost0 = max(seed.predicted_cost, float(np.min(costs)) * n_min, 1e-300)

    def objective(weight: float):
        def f(t: np.ndarray) -> float:
            n_real = np.clip(np.exp(t), n_min, 1e12)
            cost = float(np.dot(costs, n_real))
            v = predict_variance(summary, n_real, target.target)
            viol = max(0.0, v / eps_sq - 1.0)
            return cost / cost0 + weight * viol * viol
        return f

    t = np.log(np.maximum(np.array(seed.counts, float), n_min))
    for weight in (1e2, 1e4, 1e6, 1e8, 1e10, 1e12):
        t = _nelder_mead(objective(weight), t, step=0.05, max_iter=400, ftol=1e-10)
    t = _nelder_mead(objective(1e12), t, step=1e-3, max_iter=400, ftol=1e-12)

    counts = np.maximum(np.ceil(np.exp(t)).astype(int), target.min_per_level)
    counts = _repair(summary, counts, target)
    cost = _predicted_cost(summary, counts)
    if cost >= seed.predicted_cost * (1.0 - _KEEP_SEED_REL):
        counts = np.array(seed.counts, int)
        cost = seed.predicted_cost
    return Allocation(
        counts=tuple(int(c) for c in counts),
        predicted_variance=predict_variance(summary, counts, target.target),
        predicted_cost=cost,
        solver=Allocator.OPT.value,
        lagrange_lambda=seed.lagrange_lambda if init is None else None,
    )


def allocate(
    summary: LevelMomentSummary,
    target: AllocationTarget,
    allocator: Allocator | str = Allocator.OPT,
) -> Allocation:
    """Allocator dispatch."""
    allocator = Allocator(allocator)
    if allocator is Allocator.ANALYTIC_MEAN:
        return allocate_mean_analytic(summary, target)
    if allocator is Allocator.AA:
        return allocate_analytic_approximation(summary, target)
    return allocate_numerical(summary, target)


def _needs_bootstrap(target: AllocationTarget) -> bool:
    return (
        target.target.kind is StatKind.SCALARIZATION
        and target.target.cov_strategy is CovStrategy.BOOTSTRAP
    )


def iterate_allocation(
    problem: MultilevelProblem,
    x,
    target: AllocationTarget,
    *,
    allocator: Allocator | str = Allocator.OPT,
    pilot: int = 50,
    max_iters: int = 20,
    stream_key: tuple[int, ...] = (0,),
    bootstrap: BootstrapConfig | None = None,
    max_growth: float = 4.0,
) -> tuple[Allocation, CoupledSampleSet, EstimateWithError]:
    """Pilot, allocate, extend until counts stabilize, then estimate.

    Each round summarizes the current draws, allocates against the
    target, and extends every level to max(current, suggested); draws are
    never discarded. A round may grow the total pair cost by at most
    ``max_growth`` times; a larger request is scaled down toward the
    current counts while keeping its per-level proportions. Small pilots
    can put a near-zero (even negative) telescoped variance under a
    sigma denominator and inflate every kernel by a common factor, which
    wrecks the requested scale but not the requested shape, so deferring
    the scale to later rounds with refined kernels costs little and
    avoids committing absurd extensions. The loop stops when no level
    wants to grow (or after ``max_iters`` rounds), the summary is
    refreshed at the final counts, and the statistic is reported with
    the predictor evaluated at what was actually drawn. Raises
    :class:`BudgetExceededError` before any extension that would push
    spending past ``target.max_cost``.
    """
    if pilot < 4:
        raise ValueError("pilot must be at least 4")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    if max_growth <= 1.0:
        raise ValueError("max_growth must exceed 1")
    allocator = Allocator(allocator)
    if _needs_bootstrap(target) and bootstrap is None:
        bootstrap = BootstrapConfig()

    def bs_config() -> BootstrapConfig | None:
        if not _needs_bootstrap(target):
            return None
        return BootstrapConfig(
            replicates=bootstrap.replicates,
            stream_key=substream(stream_key, 2),
        )

    def check_budget(counts: np.ndarray) -> None:
        if target.max_cost is None:
            return
        projected = float(
            sum(problem.pair_cost(lv) * counts[lv - 1] for lv in range(1, problem.n_levels + 1))
        )
        if projected > target.max_cost:
            raise BudgetExceededError(
                f"allocation wants cost {projected:.6g} > max_cost {target.max_cost:.6g}"
            )

    pair_costs = np.array(
        [problem.pair_cost(lv) for lv in range(1, problem.n_levels + 1)]
    )
    start = np.full(problem.n_levels, max(pilot, target.min_per_level), dtype=int)
    check_budget(start)
    sample_set = new_sample_set(problem, x, start, substream(stream_key, 1))

    summary = None
    alloc = None
    used = 0
    extended = True
    for _ in range(max_iters):
        used += 1
        summary = build_summary(sample_set, bs_config())
        extended = False
        alloc = allocate(summary, target, allocator)
        wanted = np.maximum(np.array(alloc.counts, int), sample_set.counts)
        cost_now = float(pair_costs @ sample_set.counts)
        cost_want = float(pair_costs @ wanted)
        if cost_want > max_growth * cost_now:
            scale = max_growth * cost_now / cost_want
            wanted = np.maximum(
                np.ceil(wanted * scale).astype(int), sample_set.counts
            )
        if np.array_equal(wanted, sample_set.counts):
            break
        check_budget(wanted)
        sample_set.extend(wanted)
        extended = True

    if extended or summary is None:
        summary = build_summary(sample_set, bs_config())
    counts = sample_set.counts
    est_variance = predict_variance(summary, counts, target.target)
    value = summary_statistic(summary, target.target)
    final = Allocation(
        counts=tuple(int(c) for c in counts),
        predicted_variance=est_variance,
        predicted_cost=_predicted_cost(summary, counts),
        solver=alloc.solver,
        lagrange_lambda=alloc.lagrange_lambda,
        iterations_used=used,
    )
    estimate = EstimateWithError(
        value=value,
        est_variance=est_variance,
        std_error=math.sqrt(max(est_variance, 0.0)),
        cost_spent=sample_set.total_cost,
        counts=final.counts,
    )
    return final, sample_set, estimate
