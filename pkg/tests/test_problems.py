"""Benchmark hierarchies: level formulas, exact statistics, constraints."""

import math

import numpy as np
import pytest

from mlmc_ouu.problems import (
    MultilevelProblem,
    PROBLEM18_OPTIMUM,
    PROBLEM18_START,
    ROSENBROCK_START,
    evaluate_problem18_level,
    evaluate_rosenbrock_level,
    get_problem,
    ishigami_level_stats,
)
from mlmc_ouu.sampling import draw_coupled_samples
from mlmc_ouu.streams import uniform_block

_BETA = math.sqrt(1e-4)


def test_piecewise_level_values():
    assert evaluate_problem18_level(4, 1.0, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert evaluate_problem18_level(1, 1.0, 0.5) == pytest.approx(1.1875, abs=1e-12)
    assert evaluate_problem18_level(2, 0.0, 0.2) == pytest.approx(4.0096, abs=1e-12)


def test_piecewise_objective_continuous_at_junction():
    left = np.asarray(evaluate_problem18_level(4, 3.0 - 1e-9, 0.0)).item()
    right = np.asarray(evaluate_problem18_level(4, 3.0 + 1e-9, 0.0)).item()
    assert abs(left - right) < 1e-6


def test_level_bounds_rejected():
    with pytest.raises(ValueError):
        evaluate_problem18_level(0, 1.0, 0.0)
    with pytest.raises(ValueError):
        evaluate_problem18_level(5, 1.0, 0.0)
    with pytest.raises(ValueError):
        evaluate_rosenbrock_level(4, (1.0, 1.0), np.zeros((1, 3)))


def test_problem18_exact_stats():
    stats = get_problem("problem18").exact_stats(np.array([1.0]))
    assert stats.mean == 1.0
    assert stats.variance == pytest.approx(0.5**6 / 7.0, rel=1e-15)
    assert stats.third_central == 0.0
    assert stats.fourth_central == pytest.approx(0.5**12 / 13.0, rel=1e-15)
    assert stats.stddev == pytest.approx(4.7246e-2, rel=1e-4)
    assert stats.scalarization(3.0) == pytest.approx(1.1417, rel=1e-4)


def test_rosenbrock_level_values():
    z0 = np.zeros((1, 3))
    assert evaluate_rosenbrock_level(3, (1.0, 1.0), z0)[0] == pytest.approx(0.0, abs=1e-15)
    z1 = np.array([[math.pi / 2, math.pi / 2, 0.0]])
    got = evaluate_rosenbrock_level(3, (1.0, 1.0), z1)[0]
    assert got == pytest.approx(6.0 * _BETA, rel=1e-12)


def test_ishigami_level_means():
    means = [ishigami_level_stats(lv)[0] for lv in (1, 2, 3)]
    assert means == pytest.approx([1.5, 2.125, 2.5], rel=1e-12)
    with pytest.raises(ValueError):
        ishigami_level_stats(4)


@pytest.mark.parametrize("level", [1, 2, 3])
def test_ishigami_stats_match_sampling(level):
    problem = get_problem("rosenbrock")
    n = 200_000
    u = uniform_block((23, level), 0, n, dim=3)
    values = problem.evaluate(level, (1.0, 1.0), problem.to_inputs(u)) / _BETA
    mean, var = ishigami_level_stats(level)
    assert values.mean() == pytest.approx(mean, abs=4.0 * math.sqrt(var / n))
    assert values.var(ddof=1) == pytest.approx(var, rel=0.03)


def test_rosenbrock_exact_stats_match_sampling():
    problem = get_problem("rosenbrock")
    stats = problem.exact_stats(np.array([1.0, 1.0]))
    mean_i, var_i = ishigami_level_stats(3)
    assert stats.mean == pytest.approx(_BETA * mean_i, rel=1e-12)
    assert stats.variance == pytest.approx(_BETA**2 * var_i, rel=1e-12)
    n = 400_000
    u = uniform_block((29,), 0, n, dim=3)
    values = problem.evaluate(3, (1.0, 1.0), problem.to_inputs(u))
    centered = values - values.mean()
    assert np.mean(centered**3) / _BETA**3 == pytest.approx(
        stats.third_central / _BETA**3, abs=0.5
    )
    assert np.mean(centered**4) == pytest.approx(stats.fourth_central, rel=0.05)


def test_problem18_constraint_signs():
    problem = get_problem("problem18")
    assert problem.constraint_values(PROBLEM18_START)[0] < 0.0
    assert problem.constraint_values([2.2])[0] > 0.0
    assert problem.constraint_values([3.5])[0] < 0.0
    assert abs(problem.constraint_values([PROBLEM18_OPTIMUM])[0]) < 1e-6


def test_rosenbrock_constraint_signs():
    problem = get_problem("rosenbrock")
    assert np.all(problem.constraint_values(ROSENBROCK_START) < 0.0)
    # both constraints are active at the global constrained minimum
    assert problem.constraint_values([1.0, 1.0]) == pytest.approx([0.0, 0.0], abs=1e-12)
    assert problem.constraint_values([1.5, 1.0])[0] > 0.0


def test_pair_costs():
    problem = get_problem("problem18")
    assert problem.pair_cost(1) == pytest.approx(0.001)
    assert problem.pair_cost(4) == pytest.approx(1.1)
    with pytest.raises(ValueError):
        problem.pair_cost(5)


def test_problem_validation():
    level = lambda x, theta: theta[:, 0]
    ident = lambda u: u
    with pytest.raises(ValueError):
        MultilevelProblem("bad", 1, 1, (1.0, 0.5), (level, level), ident)
    with pytest.raises(ValueError):
        MultilevelProblem("bad", 1, 1, (1.0, 1.0), (level, level), ident)
    with pytest.raises(ValueError):
        MultilevelProblem("bad", 1, 1, (0.0, 1.0), (level, level), ident)
    with pytest.raises(ValueError):
        MultilevelProblem("bad", 1, 1, (0.1, 1.0), (level,), ident)
    with pytest.raises(ValueError):
        MultilevelProblem("bad", 0, 1, (1.0,), (level,), ident)
    with pytest.raises(ValueError):
        MultilevelProblem("bad", 1, 1, (), (), ident)


def test_registry():
    assert get_problem("problem18").n_levels == 4
    assert get_problem("rosenbrock").n_levels == 3
    alias = get_problem("rosenbrock-ishigami")
    assert alias.costs == get_problem("rosenbrock").costs
    with pytest.raises(ValueError):
        get_problem("nope")


def test_level4_sampling_matches_exact_stats():
    problem = get_problem("problem18")
    stats = problem.exact_stats(np.array([1.0]))
    got = draw_coupled_samples(problem, [1.0], 4, 100_000, (31,))
    se = math.sqrt(stats.variance / got.n)
    assert got.fine.mean() == pytest.approx(stats.mean, abs=3.0 * se)
    assert got.fine.var(ddof=1) == pytest.approx(stats.variance, rel=0.05)
    # fine and coarse share xi, so the pair difference is -0.1 xi^3
    assert got.diff.var(ddof=1) == pytest.approx(0.01 * stats.variance, rel=0.05)
