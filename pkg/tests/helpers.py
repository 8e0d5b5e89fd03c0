"""Shared builders for the test suite: toy hierarchies and random summaries."""

from dataclasses import replace

import numpy as np

from mlmc_ouu.mlmc import (
    LevelMomentSummary,
    bootstrap_cov_kernel,
    _summarize_level,
)
from mlmc_ouu.problems import MultilevelProblem
from mlmc_ouu.sampling import CoupledLevelSamples


def linear_problem(slopes, costs):
    """Levels evaluate slope_l * theta on a shared 1-D uniform(-1/2, 1/2) input."""

    def make(idx):
        return lambda x, theta, _s=slopes[idx]: _s * np.asarray(theta)[:, 0]

    return MultilevelProblem(
        name="linear",
        design_dim=1,
        input_dim=1,
        costs=tuple(costs),
        levels=tuple(make(i) for i in range(len(slopes))),
        to_inputs=lambda u: u - 0.5,
    )


def random_summary(seed: int, with_bootstrap: bool = False) -> LevelMomentSummary:
    """Moment summary of a random smooth level hierarchy.

    Per-level variances grow toward the finest level, so the telescoped
    variance stays well above the sigma guard and scalarization
    predictors run on their main (lifted) path.
    """
    rng = np.random.default_rng(seed)
    n_levels = int(rng.integers(2, 5))
    costs = [10.0 ** (lv - n_levels) for lv in range(1, n_levels + 1)]
    rows = []
    for lv in range(1, n_levels + 1):
        n = int(rng.integers(40, 200))
        z = rng.normal(size=n)
        amp_f = 0.5 + 0.5 * lv + rng.uniform(0.0, 0.3)
        amp_c = 0.5 + 0.5 * (lv - 1) + rng.uniform(0.0, 0.3)
        skew = rng.uniform(0.05, 0.3)
        fine = amp_f * z + skew * z**2
        coarse = np.zeros(n) if lv == 1 else amp_c * z + skew * z**2
        samples = CoupledLevelSamples(level=lv, fine=fine, coarse=coarse)
        pair = costs[lv - 1] + (costs[lv - 2] if lv > 1 else 0.0)
        row = _summarize_level(samples, costs[lv - 1], pair)
        if with_bootstrap:
            kernel = bootstrap_cov_kernel(samples, 64, (seed, lv))
            row = replace(row, bootstrap_kernel=kernel)
        rows.append(row)
    return LevelMomentSummary(levels=tuple(rows))
