"""Benchmark model hierarchies for multilevel estimation studies.

Two problems are provided:

* :func:`problem18`: a piecewise-smooth 1-D objective with one linear
  inequality constraint and four additive-noise fidelity levels whose
  noise amplitudes shrink toward the finest level.
* :func:`rosenbrock`: the constrained 2-D Rosenbrock function with three
  fidelity levels built from Ishigami-type noise functions of decreasing
  approximation error.

Level indices are 1-based; the last level is the finest (most expensive)
model. Each level callable maps ``(x, theta) -> values`` where ``theta``
has one row per draw, and is vectorized over draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ExactStats",
    "MultilevelProblem",
    "problem18",
    "rosenbrock",
    "evaluate_problem18_level",
    "evaluate_rosenbrock_level",
    "ishigami_level_stats",
    "PROBLEM18_OPTIMUM",
    "ROSENBROCK_START",
    "PROBLEM18_START",
]

Array = np.ndarray


@dataclass(frozen=True)
class ExactStats:
    """Exact finest-level output statistics at a fixed design point."""

    mean: float
    variance: float
    third_central: float
    fourth_central: float

    @property
    def stddev(self) -> float:
        return math.sqrt(self.variance)

    def scalarization(self, alpha: float = 3.0) -> float:
        return self.mean + alpha * self.stddev


@dataclass(frozen=True)
class MultilevelProblem:
    """A hierarchy of stochastic models sharing one random-input space.

    ``levels[k]`` evaluates fidelity level k+1 at a design ``x`` for a
    batch of mapped random inputs. ``to_inputs`` maps uniform(0,1) draws
    of shape (n, input_dim) onto the problem's native input distribution;
    coupled level pairs are evaluated on identical mapped inputs.
    ``constraints`` are exact closed forms, feasible iff <= 0. A
    constraint that compares the output mean against a design-dependent
    threshold lists the threshold in ``mean_thresholds`` (None entries
    are purely deterministic); estimators then see threshold minus the
    estimated mean instead of the exact value.
    """

    name: str
    design_dim: int
    input_dim: int
    costs: tuple[float, ...]
    levels: tuple[Callable[[Array, Array], Array], ...]
    to_inputs: Callable[[Array], Array]
    constraints: tuple[Callable[[Array], float], ...] = ()
    mean_thresholds: tuple[Callable[[Array], float] | None, ...] = ()
    exact_stats: Callable[[Array], ExactStats] | None = None

    def __post_init__(self) -> None:
        if self.design_dim < 1 or self.input_dim < 1:
            raise ValueError("design_dim and input_dim must be at least 1")
        if not self.levels:
            raise ValueError("a problem needs at least one level")
        if len(self.costs) != len(self.levels):
            raise ValueError("costs and levels must have equal length")
        if any(c <= 0 for c in self.costs):
            raise ValueError("level costs must be positive")
        if any(a >= b for a, b in zip(self.costs, self.costs[1:])):
            raise ValueError("costs must increase strictly toward the finest level")
        if self.mean_thresholds and len(self.mean_thresholds) != len(self.constraints):
            raise ValueError("mean_thresholds must have one entry per constraint")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def check_level(self, level: int) -> None:
        if not 1 <= level <= self.n_levels:
            raise ValueError(f"level must be in 1..{self.n_levels}, got {level}")

    def evaluate(self, level: int, x: Array, theta: Array) -> Array:
        """Evaluate one fidelity level on mapped random inputs."""
        self.check_level(level)
        return self.levels[level - 1](np.asarray(x, float), np.asarray(theta, float))

    def pair_cost(self, level: int) -> float:
        """Cost of one coupled draw at ``level`` (fine plus coarse model)."""
        self.check_level(level)
        cost = self.costs[level - 1]
        if level > 1:
            cost += self.costs[level - 2]
        return cost

    def constraint_values(self, x: Array) -> np.ndarray:
        return np.array([c(np.asarray(x, float)) for c in self.constraints])

    def constraint_estimates(
        self, x: Array, mean_value: float, mean_se: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Constraint values as an estimator sees them, with standard errors.

        Mean-threshold constraints report threshold minus the estimated
        mean and inherit its standard error; deterministic constraints
        report their exact value with zero error.
        """
        x = np.asarray(x, float)
        values = np.empty(len(self.constraints))
        errors = np.zeros(len(self.constraints))
        for i, con in enumerate(self.constraints):
            threshold = self.mean_thresholds[i] if self.mean_thresholds else None
            if threshold is None:
                values[i] = con(x)
            else:
                values[i] = threshold(x) - mean_value
                errors[i] = mean_se
        return values, errors


# ---------------------------------------------------------------------------
# Piecewise 1-D benchmark (four noise levels)

_P18_SLOPE = 4.0 * math.log(1.5) / 5.0
PROBLEM18_START = np.array([1.0])
# Constrained minimizer: smaller root of f_det(x) = g(x) on the parabola side.
PROBLEM18_OPTIMUM = 1.5700066793
_P18_NOISE_SCALE = {1: None, 2: None, 3: 1.1, 4: 1.0}


def _p18_f_det(x: float) -> float:
    if x <= 3.0:
        return (x - 2.0) ** 2
    return 2.0 * math.log(x - 2.0) + 1.0


def _p18_noise_coeff(level: int, x: float) -> float:
    if level == 1:
        return 1.5
    if level == 2:
        return x / 60.0 + 1.2
    return _P18_NOISE_SCALE[level]


def evaluate_problem18_level(level: int, x: Array, xi: Array) -> Array:
    """One noise level of the 1-D benchmark: f_det(x) + coeff(level, x) * xi^3.

    ``xi`` are uniform(-1/2, 1/2) draws; levels share them when coupled.
    """
    if not 1 <= level <= 4:
        raise ValueError(f"level must be in 1..4, got {level}")
    xval = float(np.asarray(x, float).reshape(-1)[0])
    xi = np.asarray(xi, float).reshape(-1)
    return _p18_f_det(xval) + _p18_noise_coeff(level, xval) * xi**3


def _p18_threshold(x: Array) -> float:
    xval = float(np.asarray(x, float).reshape(-1)[0])
    return _P18_SLOPE * (xval - 1.0)


def _p18_constraint(x: Array) -> float:
    xval = float(np.asarray(x, float).reshape(-1)[0])
    return _p18_threshold(x) - _p18_f_det(xval)


def _p18_exact(x: Array) -> ExactStats:
    # Finest-level noise is xi^3 with xi ~ U(-1/2, 1/2): odd moments vanish,
    # E[xi^6] = 0.5**6 / 7, E[xi^12] = 0.5**12 / 13.
    xval = float(np.asarray(x, float).reshape(-1)[0])
    return ExactStats(
        mean=_p18_f_det(xval),
        variance=0.5**6 / 7.0,
        third_central=0.0,
        fourth_central=0.5**12 / 13.0,
    )


def problem18() -> MultilevelProblem:
    """Piecewise 1-D objective with four additive xi^3 noise levels.

    The objective is (x-2)^2 for x <= 3 and 2 ln(x-2) + 1 beyond; the
    constraint g(x) - f_det(x) <= 0 with the secant g through (1, 0)
    carves an infeasible band between the two crossing points, so the
    constrained minimizer sits on the parabola at x ~= 1.5700067.
    """

    def make_level(level: int):
        return lambda x, theta, _l=level: evaluate_problem18_level(_l, x, theta)

    return MultilevelProblem(
        name="problem18",
        design_dim=1,
        input_dim=1,
        costs=(0.001, 0.01, 0.1, 1.0),
        levels=tuple(make_level(l) for l in (1, 2, 3, 4)),
        to_inputs=lambda u: u - 0.5,
        constraints=(_p18_constraint,),
        # f_det is the mean response, so the constraint is the secant
        # threshold minus the output mean and estimators must treat it
        # as a statistic, not a closed form
        mean_thresholds=(_p18_threshold,),
        exact_stats=_p18_exact,
    )


# ---------------------------------------------------------------------------
# Constrained Rosenbrock with Ishigami-type noise levels

_ISH_A = 5.0
_ISH_B = 0.1
_NOISE_BETA = math.sqrt(1e-4)
ROSENBROCK_START = np.array([0.25, 1.5])

# Per-level Ishigami variants: (sin-z2 amplitude factor, z3 power, z3 coeff).
# Level 3 is the classic function sin(z1) + a sin(z2)^2 + b z3^4 sin(z1).
_ISH_FORMS = {
    3: (1.0, 4, _ISH_B),
    2: (0.85, 4, _ISH_B),
    1: (0.6, 2, 0.9),
}


def _ishigami(level: int, z: Array) -> Array:
    amp, power, coeff = _ISH_FORMS[level]
    s1 = np.sin(z[:, 0])
    return s1 + amp * _ISH_A * np.sin(z[:, 1]) ** 2 + coeff * z[:, 2] ** power * s1


def ishigami_level_stats(level: int) -> tuple[float, float]:
    """Exact (mean, variance) of the level's Ishigami variant.

    For I = sin(z1) * (1 + c z3^p) + m sin(z2)^2 with z_i ~ U(-pi, pi):
    mean = m/2 and variance = E[(1 + c z3^p)^2]/2 + m^2/8, using
    E[z^(2k)] = pi^(2k)/(2k+1) and independence of the three inputs.
    """
    if level not in _ISH_FORMS:
        raise ValueError(f"level must be in 1..3, got {level}")
    amp, power, coeff = _ISH_FORMS[level]
    m = amp * _ISH_A
    even = lambda k: math.pi**k / (k + 1.0)
    sq = 1.0 + 2.0 * coeff * even(power) + coeff**2 * even(2 * power)
    return m / 2.0, sq / 2.0 + m**2 / 8.0


def _ishigami_finest_central_moments() -> tuple[float, float]:
    # Finest level A + B with A = sin(z1)(1 + b z3^4) (symmetric, mean 0)
    # and B = a sin(z2)^2 independent of A. mu3 = mu3[B]; mu4 = mu4[A]
    # + 6 mu2[A] mu2[B] + mu4[B], with E[sin^2] = 1/2, E[sin^4] = 3/8.
    b = _ISH_B
    even = lambda k: math.pi**k / (k + 1.0)
    poly2 = 1.0 + 2.0 * b * even(4) + b**2 * even(8)
    poly4 = 1.0 + 4.0 * b * even(4) + 6.0 * b**2 * even(8) + 4.0 * b**3 * even(12) + b**4 * even(16)
    mu2_a = poly2 / 2.0
    mu4_a = 3.0 / 8.0 * poly4
    # a sin^2(z2): central moments of sin^2 are (1/8, 0, 3/128) * a^(2,3,4).
    mu3_b = 0.0
    mu4_b = 3.0 * _ISH_A**4 / 128.0
    mu2_b = _ISH_A**2 / 8.0
    return mu3_b, mu4_a + 6.0 * mu2_a * mu2_b + mu4_b


def _rosen_f(x: Array) -> float:
    x = np.asarray(x, float).reshape(-1)
    return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (x[0] - 1.0) ** 2)


def evaluate_rosenbrock_level(level: int, x: Array, z: Array) -> Array:
    """One fidelity level: rosenbrock(x) + beta * I_level(z), z ~ U(-pi, pi)^3."""
    if not 1 <= level <= 3:
        raise ValueError(f"level must be in 1..3, got {level}")
    z = np.atleast_2d(np.asarray(z, float))
    return _rosen_f(x) + _NOISE_BETA * _ishigami(level, z)


def _rosen_c1(x: Array) -> float:
    x = np.asarray(x, float).reshape(-1)
    return float((x[0] - 1.0) ** 3 + 1.0 - x[1])


def _rosen_c2(x: Array) -> float:
    x = np.asarray(x, float).reshape(-1)
    return float(x[0] + x[1] - 2.0)


def _rosen_exact(x: Array) -> ExactStats:
    mean_i, var_i = ishigami_level_stats(3)
    mu3_i, mu4_i = _ishigami_finest_central_moments()
    return ExactStats(
        mean=_rosen_f(x) + _NOISE_BETA * mean_i,
        variance=_NOISE_BETA**2 * var_i,
        third_central=_NOISE_BETA**3 * mu3_i,
        fourth_central=_NOISE_BETA**4 * mu4_i,
    )


def rosenbrock() -> MultilevelProblem:
    """Constrained 2-D Rosenbrock with three Ishigami noise levels.

    Feasible iff (x1-1)^3 + 1 - x2 <= 0 and x1 + x2 - 2 <= 0. The global
    constrained minimum is (1, 1) with both constraints active; a local
    minimum sits at (0, 0) on the cubic constraint.
    """

    def make_level(level: int):
        return lambda x, theta, _l=level: evaluate_rosenbrock_level(_l, x, theta)

    return MultilevelProblem(
        name="rosenbrock",
        design_dim=2,
        input_dim=3,
        costs=(0.01, 0.1, 1.0),
        levels=tuple(make_level(l) for l in (1, 2, 3)),
        to_inputs=lambda u: -math.pi + 2.0 * math.pi * u,
        constraints=(_rosen_c1, _rosen_c2),
        exact_stats=_rosen_exact,
    )


_REGISTRY: dict[str, Callable[[], MultilevelProblem]] = {
    "problem18": problem18,
    "rosenbrock": rosenbrock,
    "rosenbrock-ishigami": rosenbrock,
}


def get_problem(name: str) -> MultilevelProblem:
    """Look up a benchmark problem by name."""
    try:
        return _REGISTRY[name]()
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise ValueError(f"unknown problem {name!r} (known: {known})") from None
