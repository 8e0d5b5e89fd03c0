"""Coupled multilevel sample sets with deterministic extension.

A coupled draw at level l evaluates models l and l-1 on the *same*
random input; level 1 pairs against the constant 0 so the telescoped
level sums reproduce finest-level statistics exactly in expectation.
Draws are independent across levels. Each level owns one substream of
the set's key, addressed by draw index, so extending a set appends new
draws without touching (or re-simulating) existing ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problems import MultilevelProblem
from .streams import substream, uniform_block

__all__ = ["CoupledLevelSamples", "CoupledSampleSet", "draw_coupled_samples", "new_sample_set"]

Array = np.ndarray


@dataclass
class CoupledLevelSamples:
    """Evaluations of a coupled model pair on shared random inputs.

    ``coarse`` is identically zero at level 1 (the telescoping base) and
    costs nothing there.
    """

    level: int
    fine: Array
    coarse: Array

    def __post_init__(self) -> None:
        self.fine = np.asarray(self.fine, float).reshape(-1)
        self.coarse = np.asarray(self.coarse, float).reshape(-1)
        if self.fine.shape != self.coarse.shape:
            raise ValueError("fine and coarse must have equal length")

    @property
    def n(self) -> int:
        return self.fine.size

    @property
    def diff(self) -> Array:
        return self.fine - self.coarse


def _draw_level(
    problem: MultilevelProblem,
    x: Array,
    level: int,
    start: int,
    count: int,
    stream_key: tuple[int, ...],
) -> CoupledLevelSamples:
    u = uniform_block(substream(stream_key, level), start, count, dim=problem.input_dim)
    theta = problem.to_inputs(u)
    fine = problem.evaluate(level, x, theta)
    if level > 1:
        coarse = problem.evaluate(level - 1, x, theta)
    else:
        coarse = np.zeros(count)
    return CoupledLevelSamples(level=level, fine=fine, coarse=coarse)


def draw_coupled_samples(
    problem: MultilevelProblem,
    x: Array,
    level: int,
    count: int,
    stream_key: tuple[int, ...],
) -> CoupledLevelSamples:
    """Draw ``count`` coupled pairs at ``level`` for design ``x``."""
    problem.check_level(level)
    if count < 0:
        raise ValueError("count must be nonnegative")
    return _draw_level(problem, x, level, 0, count, stream_key)


@dataclass
class CoupledSampleSet:
    """Per-level coupled samples at one design point, extendable in place."""

    problem: MultilevelProblem
    x: Array
    stream_key: tuple[int, ...]
    levels: list[CoupledLevelSamples] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.levels:
            self.levels = [
                CoupledLevelSamples(level=lv, fine=np.empty(0), coarse=np.empty(0))
                for lv in range(1, self.problem.n_levels + 1)
            ]
        if len(self.levels) != self.problem.n_levels:
            raise ValueError("levels must cover every problem level")

    @property
    def counts(self) -> np.ndarray:
        return np.array([lv.n for lv in self.levels], dtype=int)

    @property
    def total_cost(self) -> float:
        """Evaluation cost already spent: coupled pairs charge both models."""
        return float(
            sum(self.problem.pair_cost(lv.level) * lv.n for lv in self.levels)
        )

    def level(self, level: int) -> CoupledLevelSamples:
        self.problem.check_level(level)
        return self.levels[level - 1]

    def extend(self, counts: np.ndarray) -> None:
        """Grow each level to ``counts[l-1]`` draws; never discards draws."""
        counts = np.asarray(counts, dtype=int)
        if counts.shape != (self.problem.n_levels,):
            raise ValueError("counts must give one entry per level")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        for lv in range(1, self.problem.n_levels + 1):
            have = self.levels[lv - 1].n
            want = int(counts[lv - 1])
            if want <= have:
                continue
            fresh = _draw_level(
                self.problem, self.x, lv, have, want - have, self.stream_key
            )
            old = self.levels[lv - 1]
            self.levels[lv - 1] = CoupledLevelSamples(
                level=lv,
                fine=np.concatenate([old.fine, fresh.fine]),
                coarse=np.concatenate([old.coarse, fresh.coarse]),
            )


def new_sample_set(
    problem: MultilevelProblem,
    x: Array,
    counts: np.ndarray,
    stream_key: tuple[int, ...],
) -> CoupledSampleSet:
    """Create a sample set with ``counts[l-1]`` coupled draws per level."""
    sset = CoupledSampleSet(problem=problem, x=np.asarray(x, float), stream_key=stream_key)
    sset.extend(np.asarray(counts, dtype=int))
    return sset
