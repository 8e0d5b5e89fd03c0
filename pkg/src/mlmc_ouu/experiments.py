"""Study drivers: sampling accuracy tables and optimization-under-uncertainty.

Two study types share one JSON-configured harness:

* sampling study: many independent replicates of pilot-allocate-extend
  at a fixed design point, recording the telescoped estimate, predicted
  variance, and spend per replicate; the empirical spread over
  replicates is the ground truth the predictors are judged against.
* OUU study: noise-aware trust-region optimization where each objective
  evaluation is itself a fresh multilevel estimate; several estimator
  variants (single-level reference, mean-targeted allocation, and the
  three scalarization covariance treatments) run side by side and their
  final-design clouds are compared with distance metrics.

Determinism: every random draw is addressed by a key tuple rooted at the
config seed -- (seed, 1, rep) for sampling replicates, (seed, 3, block)
for accuracy-oracle blocks, (seed, 4|5, variant, rep, eval) for OUU
evaluations (4 = single-level, 5 = multilevel) -- so results are
byte-identical for a given config and seed regardless of worker count.
CSV floats are written with 17 significant digits and JSON keys are
sorted for the same reason.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .allocation import (
    AllocationTarget,
    Allocator,
    EstimateWithError,
    iterate_allocation,
)
from .mlmc import (
    BootstrapConfig,
    CovStrategy,
    LevelMomentSummary,
    StatKind,
    StatTarget,
    build_summary,
    predict_variance,
    predict_var_scalarization,
    summary_statistic,
)
from .optimizer import TrustRegionConfig, optimize
from .problems import MultilevelProblem, get_problem
from .sampling import CoupledLevelSamples
from .streams import substream, uniform_block

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "derive_epsilon",
    "exact_statistic",
    "mc_estimate",
    "sampling_study",
    "ouu_study",
    "run_allocate",
    "run_derive_epsilon",
    "dist_center",
    "dist_sigma",
    "dist_rmsdev",
]

# Stream purposes under the config seed.
_PURPOSE_SAMPLING = 1
_PURPOSE_ORACLE = 3
_PURPOSE_MC = 4
_PURPOSE_MLMC = 5

# Fixed variant indices keep stream keys stable across variant subsets.
_VARIANT_INDEX = {"mc": 0, "mean": 1, "pearson": 2, "corrlift": 3, "bootstrap": 4}

_ORACLE_CHUNK = 1000


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, fully described; unknown keys are rejected.

    ``epsilon_sq`` may be omitted to derive it from the problem at the
    study's design point; the OUU scalarization study also derives (or
    takes) ``epsilon_sq_mean`` for its mean-allocation variant.
    """

    problem: str = "problem18"
    x: tuple[float, ...] | None = None
    seed: int = 0
    replicates: int = 1000
    workers: int = 1
    target_kind: str = "mean"
    alpha: float = 3.0
    cov_strategy: str | None = None
    epsilon_sq: float | None = None
    epsilon_sq_mean: float | None = None
    n_ref: int = 1000
    oracle_reps: int = 100_000
    allocator: str | None = None
    pilot: int = 50
    alloc_iters: int = 20
    min_per_level: int = 10
    max_cost: float | None = None
    bootstrap_replicates: int = 100
    evaluate_kind: str | None = None
    opt_iters: int | None = None
    variants: tuple[str, ...] | None = None
    trust_region: tuple[tuple[str, float], ...] = ()
    scale: float = 1.0

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(raw)
        for key in ("x", "variants"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        if data.get("trust_region") is not None:
            tr = data["trust_region"]
            if not isinstance(tr, dict):
                raise ConfigError("trust_region must be an object")
            data["trust_region"] = tuple(sorted(tr.items()))
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def validate(self) -> None:
        try:
            problem = get_problem(self.problem)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        try:
            self.stat_target()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.evaluate_kind is not None:
            try:
                StatKind(self.evaluate_kind)
            except ValueError:
                raise ConfigError(f"unknown evaluate_kind {self.evaluate_kind!r}") from None
        if self.x is not None and len(self.x) != problem.design_dim:
            raise ConfigError(
                f"x must have {problem.design_dim} entries for {self.problem}"
            )
        if self.allocator is not None:
            try:
                Allocator(self.allocator)
            except ValueError:
                raise ConfigError(f"unknown allocator {self.allocator!r}") from None
        if self.variants is not None:
            bad = [v for v in self.variants if v not in _VARIANT_INDEX]
            if bad:
                raise ConfigError(f"unknown variants: {bad}")
        for name, value in (
            ("replicates", self.replicates),
            ("workers", self.workers),
            ("n_ref", self.n_ref),
            ("oracle_reps", self.oracle_reps),
            ("pilot", self.pilot),
            ("alloc_iters", self.alloc_iters),
            ("bootstrap_replicates", self.bootstrap_replicates),
        ):
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.seed < 0 or int(self.seed) != self.seed:
            raise ConfigError("seed must be a nonnegative integer")
        if self.min_per_level < 4:
            raise ConfigError("min_per_level must be at least 4")
        for name, value in (
            ("epsilon_sq", self.epsilon_sq),
            ("epsilon_sq_mean", self.epsilon_sq_mean),
            ("max_cost", self.max_cost),
        ):
            if value is not None and not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be positive and finite")
        if self.opt_iters is not None and self.opt_iters < 1:
            raise ConfigError("opt_iters must be at least 1")
        if not (0 < self.scale <= 1000):
            raise ConfigError("scale must be in (0, 1000]")
        try:
            self.trust_region_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad trust_region settings: {exc}") from None

    # -- derived accessors ---------------------------------------------------

    def get_problem(self) -> MultilevelProblem:
        return get_problem(self.problem)

    def design_point(self) -> np.ndarray:
        if self.x is not None:
            return np.asarray(self.x, float)
        problem = self.get_problem()
        if self.problem == "rosenbrock":
            from .problems import ROSENBROCK_START

            return np.array(ROSENBROCK_START, float)
        from .problems import PROBLEM18_START

        return np.array(PROBLEM18_START, float)

    def stat_target(self) -> StatTarget:
        kind = StatKind(self.target_kind)
        strategy = self.cov_strategy
        if kind is StatKind.SCALARIZATION and strategy is None:
            strategy = CovStrategy.PEARSON.value
        return StatTarget(kind=kind, alpha=self.alpha, cov_strategy=strategy)

    def evaluate_target(self) -> StatTarget:
        if self.evaluate_kind is None:
            return self.stat_target()
        kind = StatKind(self.evaluate_kind)
        if kind is StatKind.SCALARIZATION:
            return StatTarget(kind=kind, alpha=self.alpha, cov_strategy=CovStrategy.PEARSON)
        return StatTarget(kind=kind, alpha=self.alpha)

    def trust_region_config(self) -> TrustRegionConfig:
        return TrustRegionConfig(**dict(self.trust_region))

    def scaled_replicates(self) -> int:
        return max(1, round(self.replicates * self.scale))

    def scaled_opt_iters(self) -> int:
        base = self.opt_iters
        if base is None:
            base = 250 if self.problem == "rosenbrock" else 100
        return max(1, round(base * self.scale))

    def chosen_allocator(self, default: Allocator) -> Allocator:
        return Allocator(self.allocator) if self.allocator is not None else default

    def public_dict(self) -> dict:
        """Config echo for outputs; excludes performance-only knobs."""
        out = dataclasses.asdict(self)
        out.pop("workers")
        out["trust_region"] = dict(self.trust_region)
        return out


# ---------------------------------------------------------------------------
# Exact values, accuracy targets, single-level reference

def exact_statistic(problem: MultilevelProblem, x, target: StatTarget) -> float | None:
    """Exact value of the targeted statistic, when the problem knows it."""
    if problem.exact_stats is None:
        return None
    stats = problem.exact_stats(np.asarray(x, float))
    if target.kind is StatKind.MEAN:
        return stats.mean
    if target.kind is StatKind.VARIANCE:
        return stats.variance
    if target.kind is StatKind.STDDEV:
        return stats.stddev
    return stats.scalarization(target.alpha)


def _finest_values(
    problem: MultilevelProblem, x, start: int, count: int, key: tuple[int, ...]
) -> np.ndarray:
    u = uniform_block(key, start, count, dim=problem.input_dim)
    return problem.evaluate(problem.n_levels, x, problem.to_inputs(u))


def derive_epsilon(
    problem: MultilevelProblem,
    x,
    target: StatTarget,
    *,
    n_ref: int = 1000,
    oracle_reps: int = 100_000,
    stream_key: tuple[int, ...] = (0,),
) -> float:
    """Accuracy target epsilon^2: the variance of a single-level estimator
    that spends ``n_ref`` finest-model draws on the same statistic.

    MEAN and VARIANCE use exact closed forms of the problem's finest
    output moments. STDDEV and SCALARIZATION have no closed form; their
    estimator variance is measured over ``oracle_reps`` independent
    replications of the full single-level estimate.
    """
    if n_ref < 2:
        raise ValueError("n_ref must be at least 2")
    if target.kind in (StatKind.MEAN, StatKind.VARIANCE):
        if problem.exact_stats is None:
            raise ValueError(f"{problem.name} has no exact statistics to derive from")
        stats = problem.exact_stats(np.asarray(x, float))
        if target.kind is StatKind.MEAN:
            return stats.variance / n_ref
        mu4 = stats.fourth_central
        return mu4 / n_ref - (n_ref - 3) * stats.variance**2 / (n_ref * (n_ref - 1))
    if oracle_reps < 2:
        raise ValueError("oracle_reps must be at least 2")
    estimates = np.empty(oracle_reps)
    done = 0
    block = 0
    while done < oracle_reps:
        take = min(_ORACLE_CHUNK, oracle_reps - done)
        key = substream(stream_key, _PURPOSE_ORACLE, block)
        values = _finest_values(problem, x, 0, take * n_ref, key).reshape(take, n_ref)
        sig = np.sqrt(values.var(axis=1, ddof=1))
        if target.kind is StatKind.STDDEV:
            estimates[done : done + take] = sig
        else:
            estimates[done : done + take] = values.mean(axis=1) + target.alpha * sig
        done += take
        block += 1
    return float(estimates.var(ddof=1))


def _single_level_summary(
    problem: MultilevelProblem, values: np.ndarray
) -> LevelMomentSummary:
    from .mlmc import _summarize_level

    cost = problem.costs[-1]
    samples = CoupledLevelSamples(level=1, fine=values, coarse=np.zeros_like(values))
    return LevelMomentSummary(levels=(_summarize_level(samples, cost, cost),))


def _se_target(target: StatTarget) -> StatTarget:
    """Error-prediction flavor of a target for single-level estimates.

    At one level the delta-method covariance mu3/(2 sigma N) is exact to
    leading order, so the CORRLIFT form replaces bound-style strategies.
    """
    if target.kind is StatKind.SCALARIZATION:
        return StatTarget(target.kind, target.alpha, CovStrategy.CORRLIFT)
    return target


def mc_estimate(
    problem: MultilevelProblem,
    x,
    target: StatTarget,
    n_ref: int,
    stream_key: tuple[int, ...],
) -> EstimateWithError:
    """Single-level estimate at the finest model with its predicted error."""
    values = _finest_values(problem, x, 0, n_ref, stream_key)
    summary = _single_level_summary(problem, values)
    est_var = predict_variance(summary, [n_ref], _se_target(target))
    return EstimateWithError(
        value=summary_statistic(summary, target),
        est_variance=est_var,
        std_error=math.sqrt(max(est_var, 0.0)),
        cost_spent=float(n_ref * problem.costs[-1]),
        counts=(n_ref,),
    )


def _scal_value_clamped(summary: LevelMomentSummary, alpha: float) -> tuple[float, bool]:
    """Scalarization with sigma clamped at 0 when mu2_ml dips negative."""
    mu2 = summary.mu2_ml
    clamped = mu2 < 0
    return summary.mean_ml + alpha * math.sqrt(max(mu2, 0.0)), clamped


def _statistic_clamped(
    summary: LevelMomentSummary, target: StatTarget
) -> tuple[float, bool]:
    if target.kind is StatKind.SCALARIZATION:
        return _scal_value_clamped(summary, target.alpha)
    if target.kind is StatKind.STDDEV:
        mu2 = summary.mu2_ml
        return math.sqrt(max(mu2, 0.0)), mu2 < 0
    return summary_statistic(summary, target), False


# ---------------------------------------------------------------------------
# Deterministic file output

def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Sampling study

def _alloc_target(config: ExperimentConfig, target: StatTarget, eps_sq: float) -> AllocationTarget:
    return AllocationTarget(
        target=target,
        epsilon_sq=eps_sq,
        min_per_level=config.min_per_level,
        max_cost=config.max_cost,
    )


def _resolve_epsilons(config: ExperimentConfig, need_mean: bool) -> tuple[float, float | None]:
    problem = config.get_problem()
    x = config.design_point()
    eps = config.epsilon_sq
    if eps is None:
        eps = derive_epsilon(
            problem,
            x,
            config.stat_target(),
            n_ref=config.n_ref,
            oracle_reps=config.oracle_reps,
            stream_key=(config.seed,),
        )
    eps_mean = config.epsilon_sq_mean
    if need_mean and eps_mean is None:
        if config.stat_target().kind is StatKind.MEAN:
            eps_mean = eps
        else:
            eps_mean = derive_epsilon(
                problem, x, StatTarget(StatKind.MEAN), n_ref=config.n_ref
            )
    return eps, eps_mean


def _sampling_replicate(args: tuple[ExperimentConfig, float, int]) -> dict:
    config, eps_sq, rep = args
    problem = config.get_problem()
    x = config.design_point()
    target = config.stat_target()
    eval_target = config.evaluate_target()
    key = (config.seed, _PURPOSE_SAMPLING, rep)
    bootstrap = BootstrapConfig(replicates=config.bootstrap_replicates)
    alloc, sample_set, estimate = iterate_allocation(
        problem,
        x,
        _alloc_target(config, target, eps_sq),
        allocator=config.chosen_allocator(Allocator.OPT),
        pilot=config.pilot,
        max_iters=config.alloc_iters,
        stream_key=key,
        bootstrap=bootstrap,
    )
    row = {
        "replicate": rep,
        "value": estimate.value,
        "est_variance": estimate.est_variance,
        "std_error": estimate.std_error,
        "cost_spent": estimate.cost_spent,
        "iterations": alloc.iterations_used,
        "counts": list(alloc.counts),
        "clamped": False,
    }
    if config.evaluate_kind is not None and eval_target.kind != target.kind:
        bs = BootstrapConfig(
            replicates=config.bootstrap_replicates,
            stream_key=substream(key, 2),
        )
        needs_bs = eval_target.kind is StatKind.SCALARIZATION
        summary = build_summary(sample_set, bs if needs_bs else None)
        value, clamped = _statistic_clamped(summary, eval_target)
        row["eval_value"] = value
        row["clamped"] = clamped
        if eval_target.kind is StatKind.SCALARIZATION:
            for strat in CovStrategy:
                row[f"pred_scal_{strat.value}"] = predict_var_scalarization(
                    summary, summary.counts, config.alpha, strat
                )
        else:
            row["eval_pred_variance"] = predict_variance(
                summary, summary.counts, eval_target
            )
    else:
        row["eval_value"] = estimate.value
    return row


def _run_parallel(worker, arg_list, workers: int) -> list:
    if workers <= 1 or len(arg_list) <= 1:
        return [worker(a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, arg_list, chunksize=max(1, len(arg_list) // (4 * workers))))


def sampling_study(config: ExperimentConfig, out_dir: str) -> dict:
    """Replicated pilot-allocate-extend runs at a fixed design point."""
    os.makedirs(out_dir, exist_ok=True)
    problem = config.get_problem()
    x = config.design_point()
    target = config.stat_target()
    eval_target = config.evaluate_target()
    eps_sq, _ = _resolve_epsilons(config, need_mean=False)
    reps = config.scaled_replicates()

    rows = _run_parallel(
        _sampling_replicate,
        [(config, eps_sq, rep) for rep in range(reps)],
        config.workers,
    )

    level_cols = [f"n_level_{lv}" for lv in range(1, problem.n_levels + 1)]
    pred_cols = sorted(k for k in rows[0] if k.startswith("pred_") or k == "eval_pred_variance")
    header = (
        ["replicate", "value", "eval_value", "est_variance", "std_error", "cost_spent", "iterations", "clamped"]
        + pred_cols
        + level_cols
    )
    table = [
        [row["replicate"], row["value"], row["eval_value"], row["est_variance"],
         row["std_error"], row["cost_spent"], row["iterations"], row["clamped"]]
        + [row[c] for c in pred_cols]
        + row["counts"]
        for row in rows
    ]
    _write_csv(os.path.join(out_dir, "samples.csv"), header, table)

    values = np.array([row["value"] for row in rows])
    evals = np.array([row["eval_value"] for row in rows])
    counts = np.array([row["counts"] for row in rows], dtype=float)
    summary = {
        "config": config.public_dict(),
        "epsilon_sq": eps_sq,
        "replicates": reps,
        "value_mean": float(values.mean()),
        "value_variance": float(values.var(ddof=1)) if reps > 1 else 0.0,
        "eval_value_mean": float(evals.mean()),
        "eval_value_variance": float(evals.var(ddof=1)) if reps > 1 else 0.0,
        "mean_est_variance": float(np.mean([row["est_variance"] for row in rows])),
        "mean_cost_spent": float(np.mean([row["cost_spent"] for row in rows])),
        "mean_counts": [float(v) for v in counts.mean(axis=0)],
        "mean_iterations": float(np.mean([row["iterations"] for row in rows])),
        "n_clamped": int(sum(row["clamped"] for row in rows)),
        "exact_value": exact_statistic(problem, x, target),
        "exact_eval_value": exact_statistic(problem, x, eval_target),
    }
    for col in pred_cols:
        summary[f"mean_{col}"] = float(np.mean([row[col] for row in rows]))
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


# ---------------------------------------------------------------------------
# OUU study

def _ouu_objective_offset(config: ExperimentConfig, target: StatTarget) -> float:
    """Constant subtracted from the statistic so the optimizer's objective
    agrees with the deterministic objective where the noise is additive.

    The rosenbrock benchmark adds design-independent noise, so the
    statistic equals the deterministic value plus a fixed shift; the
    shift is the statistic at (1, 1), where the deterministic part is 0.
    """
    problem = config.get_problem()
    if config.problem != "rosenbrock" or problem.exact_stats is None:
        return 0.0
    stats = problem.exact_stats(np.array([1.0, 1.0]))
    if target.kind is StatKind.MEAN:
        return stats.mean
    if target.kind is StatKind.SCALARIZATION:
        return stats.scalarization(target.alpha)
    return 0.0


def _variant_stat_target(config: ExperimentConfig, variant: str) -> StatTarget:
    base = config.stat_target()
    if variant in ("pearson", "corrlift", "bootstrap"):
        return StatTarget(StatKind.SCALARIZATION, config.alpha, CovStrategy(variant))
    if variant == "mean":
        return StatTarget(StatKind.MEAN)
    return base


def _ouu_replicate(args: tuple[ExperimentConfig, float, float | None, str, int]) -> dict:
    config, eps_sq, eps_sq_mean, variant, rep = args
    problem = config.get_problem()
    target = config.stat_target()
    x0 = config.design_point()
    vidx = _VARIANT_INDEX[variant]
    clamp_events = 0
    eval_counter = 0

    def evaluator(x: np.ndarray):
        nonlocal eval_counter, clamp_events
        eval_counter += 1
        offset = _ouu_objective_offset(config, target)
        if variant == "mc":
            key = (config.seed, _PURPOSE_MC, vidx, rep, eval_counter)
            est = mc_estimate(problem, x, target, config.n_ref, key)
            value, se, cost = est.value, est.std_error, est.cost_spent
            if problem.mean_thresholds:
                # same stream key, so this reuses the draws the objective
                # estimate already paid for
                mean_est = mc_estimate(
                    problem, x, StatTarget(StatKind.MEAN), config.n_ref, key
                )
                cons, cons_se = problem.constraint_estimates(
                    x, mean_est.value, mean_est.std_error
                )
        else:
            key = (config.seed, _PURPOSE_MLMC, vidx, rep, eval_counter)
            alloc_stat = _variant_stat_target(config, variant)
            eps = eps_sq_mean if variant == "mean" and target.kind is not StatKind.MEAN else eps_sq
            alloc, sample_set, est = iterate_allocation(
                problem,
                x,
                _alloc_target(config, alloc_stat, eps),
                allocator=config.chosen_allocator(Allocator.AA),
                pilot=config.pilot,
                max_iters=config.alloc_iters,
                stream_key=key,
                bootstrap=BootstrapConfig(replicates=config.bootstrap_replicates),
            )
            cost = est.cost_spent
            summary = None
            if alloc_stat.kind == target.kind:
                value, se = est.value, est.std_error
            else:
                # under-resolved variant: report the study statistic computed
                # on the counts another target chose, with a conservative SE
                summary = build_summary(sample_set)
                value, clamped = _statistic_clamped(summary, target)
                clamp_events += int(clamped)
                pred = predict_variance(
                    summary,
                    summary.counts,
                    StatTarget(target.kind, target.alpha, CovStrategy.PEARSON)
                    if target.kind is StatKind.SCALARIZATION
                    else target,
                )
                se = math.sqrt(max(pred, 0.0))
            if problem.mean_thresholds:
                if summary is None:
                    summary = build_summary(sample_set)
                mean_var = predict_variance(
                    summary, summary.counts, StatTarget(StatKind.MEAN)
                )
                cons, cons_se = problem.constraint_estimates(
                    x, summary.mean_ml, math.sqrt(max(mean_var, 0.0))
                )
        if not problem.mean_thresholds:
            cons = problem.constraint_values(x)
            cons_se = np.zeros(len(cons))
        values = np.concatenate([[value - offset], cons])
        errors = np.concatenate([[se], cons_se])
        return values, errors, cost

    result = optimize(
        evaluator,
        x0,
        max_iters=config.scaled_opt_iters(),
        config=config.trust_region_config(),
    )
    cons_final = problem.constraint_values(result.x)
    return {
        "variant": variant,
        "replicate": rep,
        "x": [float(v) for v in result.x],
        "rho_final": result.rho,
        "iterations": result.iterations,
        "accepted": result.accepted,
        "cumulative_cost": result.cumulative_cost,
        "cost_per_iteration": result.cumulative_cost / max(result.iterations, 1),
        "feasible": bool(np.all(cons_final <= 1e-9)),
        "clamp_events": clamp_events,
        "history": result.history,
    }


def dist_center(xs_a: np.ndarray, xs_b: np.ndarray) -> float:
    """Distance between the two clouds' centers."""
    return float(np.linalg.norm(np.mean(xs_a, axis=0) - np.mean(xs_b, axis=0)))


def dist_sigma(xs_a: np.ndarray, xs_b: np.ndarray) -> np.ndarray:
    """Per-coordinate difference of the clouds' standard deviations."""
    return np.abs(xs_a.std(axis=0, ddof=1) - xs_b.std(axis=0, ddof=1))


def dist_rmsdev(xs_a: np.ndarray, xs_b: np.ndarray) -> float:
    """RMS distance of cloud A's points from cloud B's center."""
    center = np.mean(xs_b, axis=0)
    return float(np.sqrt(np.mean(np.sum((xs_a - center) ** 2, axis=1))))


def _default_variants(target: StatTarget) -> tuple[str, ...]:
    if target.kind is StatKind.SCALARIZATION:
        return ("mc", "mean", "pearson", "corrlift", "bootstrap")
    return ("mc", "mean")


def ouu_study(config: ExperimentConfig, out_dir: str) -> dict:
    """Optimization under uncertainty with side-by-side estimator variants."""
    os.makedirs(out_dir, exist_ok=True)
    problem = config.get_problem()
    target = config.stat_target()
    if target.kind not in (StatKind.MEAN, StatKind.SCALARIZATION):
        raise ConfigError("ouu-study targets must be mean or scalarization")
    variants = config.variants or _default_variants(target)
    if "mc" not in variants:
        variants = ("mc",) + tuple(variants)
    need_mean_eps = "mean" in variants and target.kind is not StatKind.MEAN
    eps_sq, eps_sq_mean = _resolve_epsilons(config, need_mean=need_mean_eps)
    reps = config.scaled_replicates()

    args = [
        (config, eps_sq, eps_sq_mean, variant, rep)
        for variant in variants
        for rep in range(reps)
    ]
    rows = _run_parallel(_ouu_replicate, args, config.workers)

    traj_dir = os.path.join(out_dir, "trajectories")
    os.makedirs(traj_dir, exist_ok=True)
    for row in rows:
        path = os.path.join(traj_dir, f"{row['variant']}_rep{row['replicate']:04d}.jsonl")
        with open(path, "w") as fh:
            for record in row["history"]:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    dim = problem.design_dim
    header = (
        ["variant", "replicate"]
        + [f"x_{i + 1}" for i in range(dim)]
        + ["rho_final", "iterations", "accepted", "cumulative_cost",
           "cost_per_iteration", "feasible", "clamp_events"]
    )
    table = [
        [row["variant"], row["replicate"]]
        + row["x"]
        + [row["rho_final"], row["iterations"], row["accepted"],
           row["cumulative_cost"], row["cost_per_iteration"], row["feasible"],
           row["clamp_events"]]
        for row in rows
    ]
    _write_csv(os.path.join(out_dir, "final_designs.csv"), header, table)

    by_variant = {
        variant: np.array([row["x"] for row in rows if row["variant"] == variant])
        for variant in variants
    }
    mc_cloud = by_variant["mc"]
    metrics: dict = {
        "config": config.public_dict(),
        "epsilon_sq": eps_sq,
        "epsilon_sq_mean": eps_sq_mean,
        "replicates": reps,
        "opt_iters": config.scaled_opt_iters(),
        "variants": {},
    }
    for variant in variants:
        cloud = by_variant[variant]
        variant_rows = [row for row in rows if row["variant"] == variant]
        metrics["variants"][variant] = {
            "center": [float(v) for v in cloud.mean(axis=0)],
            "spread": [float(v) for v in cloud.std(axis=0, ddof=1)] if len(cloud) > 1 else [0.0] * dim,
            "dist_center": dist_center(cloud, mc_cloud),
            "dist_sigma": [float(v) for v in dist_sigma(cloud, mc_cloud)] if len(cloud) > 1 else [0.0] * dim,
            "dist_rmsdev": dist_rmsdev(cloud, mc_cloud),
            "mean_cost_per_iteration": float(np.mean([r["cost_per_iteration"] for r in variant_rows])),
            "mean_cumulative_cost": float(np.mean([r["cumulative_cost"] for r in variant_rows])),
            "feasible_fraction": float(np.mean([r["feasible"] for r in variant_rows])),
            "clamp_events": int(sum(r["clamp_events"] for r in variant_rows)),
        }
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    return metrics


# ---------------------------------------------------------------------------
# One-shot operations for the CLI

def run_allocate(config: ExperimentConfig, out_dir: str) -> dict:
    """Single pilot-allocate-extend run; writes allocation.json."""
    os.makedirs(out_dir, exist_ok=True)
    problem = config.get_problem()
    x = config.design_point()
    eps_sq, _ = _resolve_epsilons(config, need_mean=False)
    alloc, _, estimate = iterate_allocation(
        problem,
        x,
        _alloc_target(config, config.stat_target(), eps_sq),
        allocator=config.chosen_allocator(Allocator.OPT),
        pilot=config.pilot,
        max_iters=config.alloc_iters,
        stream_key=(config.seed, _PURPOSE_SAMPLING, 0),
        bootstrap=BootstrapConfig(replicates=config.bootstrap_replicates),
    )
    payload = {
        "config": config.public_dict(),
        "epsilon_sq": eps_sq,
        "counts": list(alloc.counts),
        "predicted_variance": alloc.predicted_variance,
        "predicted_cost": alloc.predicted_cost,
        "solver": alloc.solver,
        "lagrange_lambda": alloc.lagrange_lambda,
        "iterations_used": alloc.iterations_used,
        "estimate": estimate.value,
        "std_error": estimate.std_error,
        "cost_spent": estimate.cost_spent,
    }
    _write_json(os.path.join(out_dir, "allocation.json"), payload)
    return payload


def run_derive_epsilon(config: ExperimentConfig, out_dir: str) -> dict:
    """Derive epsilon^2 for the configured statistic; writes epsilon.json."""
    os.makedirs(out_dir, exist_ok=True)
    problem = config.get_problem()
    x = config.design_point()
    eps = derive_epsilon(
        problem,
        x,
        config.stat_target(),
        n_ref=config.n_ref,
        oracle_reps=config.oracle_reps,
        stream_key=(config.seed,),
    )
    payload = {
        "config": config.public_dict(),
        "epsilon_sq": eps,
        "target_kind": config.target_kind,
        "n_ref": config.n_ref,
    }
    _write_json(os.path.join(out_dir, "epsilon.json"), payload)
    return payload
