"""Whale optimisation: shrinking encirclement, spiral approach and random search."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .swarm import BoxProblem, SwarmResult, attach_evaluation, bounds_of, make_rng


@dataclass(frozen=True)
class WoaConfig:
    population: int = 50
    max_iterations: int = 150
    b: float = 1.0  # logarithmic spiral shape
    seed: int = 0
    dimension: int | None = None

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if not self.b > 0:
            raise ValueError("spiral constant b must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")


class ControlParams(NamedTuple):
    a: float
    A: float
    C: float
    l: float
    p: float


def control_params(t: int, max_iterations: int, rng: np.random.Generator) -> ControlParams:
    """Draw p, r, l (in that order) for one whale at iteration t.

    a falls linearly from 2 towards 0; A = 2ar - a and C = 2r share the same r.
    """
    a = 2.0 * (1.0 - t / max_iterations)
    p = rng.random()
    r = rng.random()
    l = rng.uniform(-1.0, 1.0)
    return ControlParams(a=a, A=2.0 * a * r - a, C=2.0 * r, l=l, p=p)


def _clamp(x, lower, upper):
    if lower is None and upper is None:
        return x
    return np.clip(x, lower, upper)


def encircle_update(X, X_star, A, C, lower=None, upper=None) -> np.ndarray:
    D = np.abs(C * X_star - X)
    return _clamp(X_star - A * D, lower, upper)


def spiral_update(X, X_star, l, b, lower=None, upper=None) -> np.ndarray:
    D = np.abs(X_star - X)
    return _clamp(D * math.exp(b * l) * math.cos(2.0 * math.pi * l) + X_star, lower, upper)


def explore_update(X, X_rand, A, C, lower=None, upper=None) -> np.ndarray:
    D = np.abs(C * X_rand - X)
    return _clamp(X_rand - A * D, lower, upper)


def _other_index(i: int, n: int, rng: np.random.Generator) -> int:
    j = int(rng.integers(n - 1))
    return j + 1 if j >= i else j


def woa_optimize(problem: BoxProblem, config: WoaConfig | None = None) -> SwarmResult:
    """Minimise ``problem`` with the whale optimiser.

    Whales are updated one at a time; each new position is scored straight away
    and replaces the leader X* only on strict improvement, so later whales in
    the same iteration chase the updated leader.
    """
    config = config or WoaConfig()
    lo, hi = bounds_of(problem)
    if config.dimension is not None and config.dimension != lo.size:
        raise ValueError(f"config dimension {config.dimension} != problem dimension {lo.size}")
    started = time.perf_counter()
    rng = make_rng(config.seed)
    n = config.population

    X = lo + (hi - lo) * rng.random((n, lo.size))
    fit = np.array([problem(x) for x in X])
    lead = int(np.argmin(fit))
    best_x, best_f = X[lead].copy(), float(fit[lead])

    curve, mean = [], []
    counts = {"encircle": 0, "explore": 0, "spiral": 0}
    for t in range(config.max_iterations):
        for i in range(n):
            cp = control_params(t, config.max_iterations, rng)
            if cp.p < 0.5:
                if abs(cp.A) < 1:
                    new = encircle_update(X[i], best_x, cp.A, cp.C, lo, hi)
                    counts["encircle"] += 1
                else:
                    j = _other_index(i, n, rng)
                    new = explore_update(X[i], X[j], cp.A, cp.C, lo, hi)
                    counts["explore"] += 1
            else:
                new = spiral_update(X[i], best_x, cp.l, config.b, lo, hi)
                counts["spiral"] += 1
            X[i] = new
            fit[i] = problem(new)
            if fit[i] < best_f:
                best_x, best_f = new.copy(), float(fit[i])
        curve.append(best_f)
        mean.append(float(np.mean(fit)))

    result = SwarmResult(
        algorithm="woa",
        best_position=best_x,
        best_fitness=best_f,
        convergence=np.array(curve),
        mean_fitness=np.array(mean),
        iterations_run=config.max_iterations,
        evaluations=n * (config.max_iterations + 1),
        seed=config.seed,
        extras={"moves": counts},
    )
    attach_evaluation(result, problem)
    result.wall_time = time.perf_counter() - started
    return result
