"""Noise-aware derivative-free trust-region optimizer.

Minimizes a noisy black-box objective subject to noisy black-box
inequality constraints (feasible iff <= 0). Each evaluation returns
values, their standard errors, and its cost. The loop keeps Gaussian
process surrogates of every output and works on *smoothed* quantities:

    value~(x) = gamma * gp_mean(x) + (1 - gamma) * raw(x)
    noise~(x) = gamma * 2 * gp_std(x) + (1 - gamma) * se(x)

with gamma = exp(-gp_std(x)), so confident surrogates dominate and an
untrained surrogate passes raw values through. The trust-region radius
is floored at lambda_t * sqrt(max smoothed noise): steps smaller than
the noise scale are not resolvable, so radius and estimator accuracy
shrink together.

Steps come from least-squares quadratic (or linear, when points are
scarce) models of the smoothed outputs over recent evaluations near the
iterate, minimized inside the unit ball by projected gradient descent
with an Armijo backtracking line search. When the smoothed constraints
are violated at the iterate, the step instead minimizes the squared
violation (feasibility restoration). Ratio acceptance compares smoothed
actual vs model-predicted decrease; accepted candidates move the
iterate, and every evaluation (accepted or not) trains the surrogates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "TrustRegionConfig",
    "Evaluation",
    "OptimizeResult",
    "GaussianProcess",
    "optimize",
]

Array = np.ndarray
# An evaluator maps x -> (values, standard errors, cost); index 0 is the
# objective, the rest are constraints.
Evaluator = Callable[[Array], tuple[Array, Array, float]]


@dataclass(frozen=True)
class TrustRegionConfig:
    rho0: float = 0.25
    rho_min: float = 1e-8
    rho_max: float = 2.0
    eta_accept: float = 0.1
    eta_grow: float = 0.75
    shrink: float = 0.5
    grow: float = 2.0
    lambda_t: float = 1.0
    gp_jitter: float = 1e-10
    gp_refit_every: int = 5
    model_radius_factor: float = 2.0
    model_radius_expand: float = 1.5
    pg_steps: int = 200

    def __post_init__(self) -> None:
        if not (0 < self.rho_min <= self.rho0 <= self.rho_max):
            raise ValueError("need 0 < rho_min <= rho0 <= rho_max")
        if not (0 < self.eta_accept < self.eta_grow < 1):
            raise ValueError("need 0 < eta_accept < eta_grow < 1")
        if not (0 < self.shrink < 1 < self.grow):
            raise ValueError("need 0 < shrink < 1 < grow")
        if self.lambda_t <= 0:
            raise ValueError("lambda_t must be positive")


@dataclass
class Evaluation:
    """One black-box evaluation: outputs, standard errors, and cost."""

    x: Array
    values: Array
    errors: Array
    cost: float


@dataclass
class OptimizeResult:
    x: Array
    rho: float
    iterations: int
    accepted: int
    cumulative_cost: float
    evaluations: list[Evaluation]
    history: list[dict]

    @property
    def final_record(self) -> dict:
        return self.history[-1]


# ---------------------------------------------------------------------------
# Gaussian process surrogate

class GaussianProcess:
    """Squared-exponential GP with per-point observation noise.

    The prior mean is the training mean; hyperparameters come from a
    coarse grid search over a shared lengthscale multiplier and a signal
    variance multiplier, scored by marginal likelihood. The signal
    variance is clamped from below by the mean observation noise so the
    surrogate never claims more confidence than the data supports.
    """

    def __init__(self, jitter: float = 1e-10) -> None:
        self.jitter = jitter
        self.x: Array | None = None
        self._prior = 0.0
        self._alpha: Array | None = None
        self._chol: Array | None = None
        self.lengthscales: Array | None = None
        self.signal_var = 1.0

    @property
    def trained(self) -> bool:
        return self._alpha is not None

    def _kernel(self, xa: Array, xb: Array) -> Array:
        d = (xa[:, None, :] - xb[None, :, :]) / self.lengthscales
        return self.signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))

    def _default_lengthscales(self, x: Array, fallback: float) -> Array:
        spread = np.ptp(x, axis=0) / 2.0
        return np.maximum(spread, fallback)

    def fit(
        self,
        x: Array,
        y: Array,
        noise_var: Array,
        *,
        scale_hint: float = 0.25,
    ) -> None:
        """Refresh the factorization; keeps current hyperparameters."""
        self.x = np.atleast_2d(np.asarray(x, float))
        self.y = np.asarray(y, float)
        self.noise_var = np.asarray(noise_var, float)
        if self.lengthscales is None:
            self.lengthscales = self._default_lengthscales(self.x, scale_hint)
            self.signal_var = max(self.y.var(), float(self.noise_var.mean()), 1e-12)
        self._prior = float(self.y.mean())
        self._factorize()

    def _factorize(self) -> None:
        k = self._kernel(self.x, self.x)
        # jitter scales with the signal so duplicates stay factorable
        a = k + np.diag(self.noise_var + self.jitter * max(1.0, self.signal_var))
        # solve through the Cholesky factor; forming the explicit inverse
        # loses the posterior-variance cancellation to roundoff once the
        # training set holds many near-coincident points
        self._chol = np.linalg.cholesky(a)
        z = np.linalg.solve(self._chol, self.y - self._prior)
        self._alpha = np.linalg.solve(self._chol.T, z)

    def _log_marginal(self) -> float:
        resid = self.y - self._prior
        return float(
            -0.5 * resid @ self._alpha
            - np.log(np.diag(self._chol)).sum()
            - 0.5 * len(self.y) * math.log(2.0 * math.pi)
        )

    def refit_hyperparams(self) -> None:
        """Coarse grid search over lengthscale and signal multipliers."""
        if self.x is None or len(self.y) < 3:
            return
        base_ls = self._default_lengthscales(self.x, float(self.lengthscales.min()))
        noise_floor = max(float(self.noise_var.mean()), 1e-12)
        base_sig = max(self.y.var(), noise_floor)
        best = (-math.inf, self.lengthscales, self.signal_var)
        for ls_mult in (0.25, 0.5, 1.0, 2.0, 4.0):
            for sig_mult in (0.25, 1.0, 4.0):
                self.lengthscales = np.maximum(base_ls * ls_mult, 1e-8)
                self.signal_var = max(base_sig * sig_mult, noise_floor)
                try:
                    self._factorize()
                except np.linalg.LinAlgError:
                    continue
                score = self._log_marginal()
                if score > best[0]:
                    best = (score, self.lengthscales.copy(), self.signal_var)
        _, self.lengthscales, self.signal_var = best
        self._factorize()

    def posterior(self, x: Array) -> tuple[float, float]:
        """Posterior mean and standard deviation at one point."""
        if not self.trained:
            raise RuntimeError("posterior of an untrained surrogate")
        q = np.atleast_2d(np.asarray(x, float))
        k = self._kernel(q, self.x)[0]
        mean = self._prior + float(k @ self._alpha)
        v = np.linalg.solve(self._chol, k)
        var = self.signal_var - float(v @ v)
        return mean, math.sqrt(max(var, 0.0))


def _smooth(gp: GaussianProcess, x: Array, raw: float, se: float) -> tuple[float, float]:
    """Blend raw value/noise with the surrogate by gamma = exp(-gp_std)."""
    if not gp.trained:
        return raw, se
    mean, std = gp.posterior(x)
    gamma = math.exp(-std)
    return gamma * mean + (1.0 - gamma) * raw, gamma * 2.0 * std + (1.0 - gamma) * se


# ---------------------------------------------------------------------------
# Local regression models in trust-region coordinates s = (x - center)/rho

@dataclass
class _LocalModel:
    c: float
    g: Array
    h: Array

    def value(self, s: Array) -> float:
        return self.c + float(self.g @ s) + 0.5 * float(s @ self.h @ s)

    def grad(self, s: Array) -> Array:
        return self.g + self.h @ s


def _quad_features(s: Array) -> Array:
    d = s.shape[1]
    cols = [np.ones(len(s))] + [s[:, i] for i in range(d)]
    for i in range(d):
        cols.append(0.5 * s[:, i] ** 2)
    for i in range(d):
        for j in range(i + 1, d):
            cols.append(s[:, i] * s[:, j])
    return np.column_stack(cols)


def _fit_local_model(s: Array, y: Array) -> _LocalModel:
    n, d = s.shape
    quad_need = (d + 1) * (d + 2) // 2
    if n >= quad_need:
        phi = _quad_features(s)
        coef, *_ = np.linalg.lstsq(phi, y, rcond=None)
        c = coef[0]
        g = coef[1 : d + 1]
        h = np.zeros((d, d))
        idx = d + 1
        for i in range(d):
            h[i, i] = coef[idx]
            idx += 1
        for i in range(d):
            for j in range(i + 1, d):
                h[i, j] = h[j, i] = coef[idx]
                idx += 1
        return _LocalModel(float(c), g, h)
    phi = np.column_stack([np.ones(n)] + [s[:, i] for i in range(d)])
    coef, *_ = np.linalg.lstsq(phi, y, rcond=None)
    return _LocalModel(float(coef[0]), coef[1:], np.zeros((d, d)))


def _project_ball(s: Array) -> Array:
    norm = float(np.linalg.norm(s))
    return s / norm if norm > 1.0 else s


def _pg_minimize(fun, grad, s0: Array, steps: int) -> Array:
    """Projected gradient with Armijo backtracking inside the unit ball."""
    s = _project_ball(np.asarray(s0, float))
    fs = fun(s)
    step = 0.5
    for _ in range(steps):
        g = grad(s)
        cand = _project_ball(s - step * g)
        move = s - cand
        decrease = float(g @ move)
        if decrease <= 0:
            step *= 0.5
            if step < 1e-12:
                break
            continue
        fc = fun(cand)
        if fc <= fs - 1e-4 * decrease:
            s, fs = cand, fc
            step = min(step * 1.5, 1.0)
        else:
            step *= 0.5
            if step < 1e-12:
                break
    return s


def _solve_tr_step(
    obj: _LocalModel, cons: list[_LocalModel], margins: Array, steps: int
) -> Array:
    """Minimize the objective model with penalized constraint margins."""
    scale = max(1.0, abs(obj.c))
    stage_steps = max(steps // 3, 1)
    s = np.zeros(len(obj.g))
    for weight in (1e2, 1e4, 1e6):
        w = weight * scale

        def fun(sv: Array) -> float:
            total = obj.value(sv)
            for m, margin in zip(cons, margins):
                total += w * max(0.0, m.value(sv) + margin) ** 2
            return total

        def grad(sv: Array) -> Array:
            g = obj.grad(sv)
            for m, margin in zip(cons, margins):
                viol = max(0.0, m.value(sv) + margin)
                if viol > 0.0:
                    g = g + 2.0 * w * viol * m.grad(sv)
            return g

        s = _pg_minimize(fun, grad, s, stage_steps)
    return s


def _solve_restoration_step(cons: list[_LocalModel], steps: int) -> Array:
    """Minimize the summed squared constraint violation models."""

    def fun(sv: Array) -> float:
        return sum(max(0.0, m.value(sv)) ** 2 for m in cons)

    def grad(sv: Array) -> Array:
        g = np.zeros(len(cons[0].g))
        for m in cons:
            viol = max(0.0, m.value(sv))
            if viol > 0.0:
                g = g + 2.0 * viol * m.grad(sv)
        return g

    return _pg_minimize(fun, grad, np.zeros(len(cons[0].g)), steps)


def _violation(values: Sequence[float]) -> float:
    return sum(max(0.0, v) ** 2 for v in values)


# ---------------------------------------------------------------------------
# Main loop

def optimize(
    evaluator: Evaluator,
    x0: Array,
    *,
    max_iters: int = 100,
    config: TrustRegionConfig = TrustRegionConfig(),
    trajectory_path: str | None = None,
) -> OptimizeResult:
    """Run the noise-aware trust-region loop from ``x0``.

    Initialization evaluates ``x0`` and one probe per coordinate at
    distance rho0; each iteration evaluates exactly one candidate. There
    is no convergence test: noisy problems are run for a fixed budget and
    the final iterate, radius, and full trajectory are returned. When
    ``trajectory_path`` is given, one JSON record per iteration is
    appended there.
    """
    x0 = np.asarray(x0, float).reshape(-1)
    cfg = config
    dim = len(x0)

    evaluations: list[Evaluation] = []
    cumulative = 0.0

    def evaluate(x: Array) -> Evaluation:
        nonlocal cumulative
        values, errors, cost = evaluator(np.array(x, float))
        ev = Evaluation(
            x=np.array(x, float),
            values=np.asarray(values, float).reshape(-1),
            errors=np.asarray(errors, float).reshape(-1),
            cost=float(cost),
        )
        evaluations.append(ev)
        cumulative += ev.cost
        return ev

    current = evaluate(x0)
    n_out = len(current.values)
    if len(current.errors) != n_out:
        raise ValueError("evaluator must return one error per output")
    for i in range(dim):
        probe = x0.copy()
        probe[i] += cfg.rho0
        evaluate(probe)

    gps = [GaussianProcess(jitter=cfg.gp_jitter) for _ in range(n_out)]

    def refit_gps(grid: bool) -> None:
        xs = np.array([ev.x for ev in evaluations])
        for j, gp in enumerate(gps):
            ys = np.array([ev.values[j] for ev in evaluations])
            noise = np.array([ev.errors[j] ** 2 for ev in evaluations])
            gp.fit(xs, ys, noise, scale_hint=cfg.rho0)
            if grid:
                gp.refit_hyperparams()

    refit_gps(grid=True)

    def smooth_all(ev: Evaluation) -> tuple[np.ndarray, np.ndarray]:
        pairs = [
            _smooth(gp, ev.x, float(v), float(e))
            for gp, v, e in zip(gps, ev.values, ev.errors)
        ]
        vals = np.array([p[0] for p in pairs])
        noises = np.array([p[1] for p in pairs])
        return vals, noises

    def local_models(center: Array, rho: float) -> list[_LocalModel]:
        xs = np.array([ev.x for ev in evaluations])
        dist = np.linalg.norm(xs - center, axis=1)
        radius = cfg.model_radius_factor * rho
        quad_need = (dim + 1) * (dim + 2) // 2
        sel = dist <= radius
        while sel.sum() < quad_need and radius < 4.0 * cfg.rho_max:
            radius *= cfg.model_radius_expand
            sel = dist <= radius
        pts = xs[sel]
        s = (pts - center) / rho
        smoothed = np.array([smooth_all(evaluations[i])[0] for i in np.where(sel)[0]])
        return [_fit_local_model(s, smoothed[:, j]) for j in range(n_out)]

    rho = cfg.rho0
    accepted_count = 0
    history: list[dict] = []
    traj = open(trajectory_path, "w") if trajectory_path else None
    try:
        for k in range(1, max_iters + 1):
            cur_vals, cur_noise = smooth_all(current)
            floor = cfg.lambda_t * math.sqrt(float(cur_noise.max()))
            rho = min(max(rho, floor, cfg.rho_min), cfg.rho_max)

            restoration = bool(np.any(cur_vals[1:] > 0.0))
            models = local_models(current.x, rho)
            if restoration and n_out > 1:
                step = _solve_restoration_step(models[1:], cfg.pg_steps)
                pred = _violation(
                    [m.value(np.zeros(dim)) for m in models[1:]]
                ) - _violation([m.value(step) for m in models[1:]])
            else:
                restoration = False
                margins = cur_noise[1:]
                step = _solve_tr_step(models[0], models[1:], margins, cfg.pg_steps)
                pred = models[0].value(np.zeros(dim)) - models[0].value(step)

            candidate = evaluate(current.x + rho * step)
            cand_vals, cand_noise = smooth_all(candidate)

            if restoration:
                actual = _violation(cur_vals[1:]) - _violation(cand_vals[1:])
                feasible_enough = True
            else:
                actual = cur_vals[0] - cand_vals[0]
                feasible_enough = bool(
                    np.all(cand_vals[1:] <= cand_noise[1:])
                )
            ratio = actual / pred if pred > 0 else -math.inf
            accept = pred > 0 and ratio >= cfg.eta_accept and feasible_enough

            if accept:
                current = candidate
                accepted_count += 1
            if accept and ratio >= cfg.eta_grow:
                rho *= cfg.grow
            elif not accept or ratio < cfg.eta_accept:
                rho *= cfg.shrink
            rho = min(max(rho, cfg.rho_min), cfg.rho_max)

            refit_gps(grid=accept and accepted_count % cfg.gp_refit_every == 0)

            rec_vals, rec_noise = (cand_vals, cand_noise) if accept else (cur_vals, cur_noise)
            record = {
                "iteration": k,
                "x": [float(v) for v in current.x],
                "rho": float(rho),
                "objective": float(rec_vals[0]),
                "constraints": [float(v) for v in rec_vals[1:]],
                "noise": [float(v) for v in rec_noise],
                "accepted": bool(accept),
                "restoration": bool(restoration),
                "cumulative_cost": float(cumulative),
            }
            history.append(record)
            if traj is not None:
                traj.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if traj is not None:
            traj.close()

    return OptimizeResult(
        x=current.x.copy(),
        rho=rho,
        iterations=len(history),
        accepted=accepted_count,
        cumulative_cost=cumulative,
        evaluations=evaluations,
        history=history,
    )
