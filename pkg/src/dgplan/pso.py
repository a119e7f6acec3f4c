"""Particle swarm optimisation with linearly decaying inertia."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .swarm import BoxProblem, SwarmResult, attach_evaluation, bounds_of, make_rng


@dataclass(frozen=True)
class PsoConfig:
    population: int = 50
    max_iterations: int = 150
    w_min: float = 0.4
    w_max: float = 0.9
    c1: float = 2.0
    c2: float = 2.0
    seed: int = 0
    v_max_fraction: float = 0.2
    dimension: int | None = None  # taken from the problem when None

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if not 0 <= self.w_min <= self.w_max:
            raise ValueError("need 0 <= w_min <= w_max")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("acceleration coefficients must be non-negative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.v_max_fraction <= 0:
            raise ValueError("v_max_fraction must be positive")


def inertia_weight(t: int, config: PsoConfig) -> float:
    """w(t) = w_max - (w_max - w_min) * t / max_iterations."""
    if config.max_iterations == 0:
        return config.w_max
    return config.w_max - (config.w_max - config.w_min) * t / config.max_iterations


@dataclass
class SwarmState:
    position: np.ndarray  # (population, dimension)
    velocity: np.ndarray
    fitness: np.ndarray  # fitness at the current positions
    pbest_position: np.ndarray
    pbest_fitness: np.ndarray
    gbest_position: np.ndarray
    gbest_fitness: float


def initial_state(problem: BoxProblem, config: PsoConfig, rng: np.random.Generator) -> SwarmState:
    lo, hi = bounds_of(problem)
    x = lo + (hi - lo) * rng.random((config.population, lo.size))
    fit = np.array([problem(xi) for xi in x])
    best = int(np.argmin(fit))
    return SwarmState(
        position=x,
        velocity=np.zeros_like(x),
        fitness=fit,
        pbest_position=x.copy(),
        pbest_fitness=fit.copy(),
        gbest_position=x[best].copy(),
        gbest_fitness=float(fit[best]),
    )


def move(state: SwarmState, w: float, r1: np.ndarray, r2: np.ndarray, config: PsoConfig, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Velocity and position update for given random factors; returns (position, velocity)."""
    x = state.position
    v = (
        w * state.velocity
        + config.c1 * r1 * (state.pbest_position - x)
        + config.c2 * r2 * (state.gbest_position - x)
    )
    v_cap = config.v_max_fraction * (hi - lo)
    v = np.clip(v, -v_cap, v_cap)
    x_new = x + v
    out = (x_new < lo) | (x_new > hi)
    x_new = np.clip(x_new, lo, hi)
    v = np.where(out, 0.0, v)
    return x_new, v


def step(state: SwarmState, t: int, rng: np.random.Generator, problem: BoxProblem, config: PsoConfig) -> SwarmState:
    """One synchronous iteration: all particles move against g(t), then bests update.

    Draw order: for each particle in index order, r1 for every coordinate
    followed by r2 for every coordinate.
    """
    lo, hi = bounds_of(problem)
    n, d = state.position.shape
    r = rng.random((n, 2, d))
    x, v = move(state, inertia_weight(t, config), r[:, 0, :], r[:, 1, :], config, lo, hi)
    fit = np.array([problem(xi) for xi in x])

    improved = fit < state.pbest_fitness
    pbest_x = np.where(improved[:, None], x, state.pbest_position)
    pbest_f = np.where(improved, fit, state.pbest_fitness)
    best = int(np.argmin(pbest_f))
    if pbest_f[best] < state.gbest_fitness:
        g_x, g_f = pbest_x[best].copy(), float(pbest_f[best])
    else:
        g_x, g_f = state.gbest_position, state.gbest_fitness
    return SwarmState(x, v, fit, pbest_x, pbest_f, g_x, g_f)


def pso_optimize(problem: BoxProblem, config: PsoConfig | None = None) -> SwarmResult:
    """Minimise ``problem`` over its box; returns the best position ever evaluated."""
    config = config or PsoConfig()
    lo, _ = bounds_of(problem)
    if config.dimension is not None and config.dimension != lo.size:
        raise ValueError(f"config dimension {config.dimension} != problem dimension {lo.size}")
    started = time.perf_counter()
    rng = make_rng(config.seed)
    state = initial_state(problem, config, rng)
    curve, mean = [], []
    for t in range(config.max_iterations):
        state = step(state, t, rng, problem, config)
        curve.append(state.gbest_fitness)
        mean.append(float(np.mean(state.fitness)))
    result = SwarmResult(
        algorithm="pso",
        best_position=state.gbest_position.copy(),
        best_fitness=state.gbest_fitness,
        convergence=np.array(curve),
        mean_fitness=np.array(mean),
        iterations_run=config.max_iterations,
        evaluations=config.population * (config.max_iterations + 1),
        seed=config.seed,
    )
    attach_evaluation(result, problem)
    result.wall_time = time.perf_counter() - started
    return result
