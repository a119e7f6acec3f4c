"""Pieces shared by the particle-swarm and whale optimizers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np


class BoxProblem(Protocol):
    lower: np.ndarray
    upper: np.ndarray

    def __call__(self, x: np.ndarray) -> float: ...


@dataclass
class Box:
    """Wrap a plain function ``f(x) -> float`` with box bounds."""

    func: Callable[[np.ndarray], float]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or np.any(self.lower >= self.upper):
            raise ValueError("lower bounds must be strictly below upper bounds")

    @property
    def dimension(self) -> int:
        return self.lower.size

    def __call__(self, x: np.ndarray) -> float:
        return float(self.func(x))


def bounds_of(problem: BoxProblem) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(problem.lower, dtype=float)
    hi = np.asarray(problem.upper, dtype=float)
    return lo, hi


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass
class SwarmResult:
    algorithm: str
    best_position: np.ndarray
    best_fitness: float
    convergence: np.ndarray  # best fitness after each iteration
    mean_fitness: np.ndarray  # mean fitness of the population after each iteration
    iterations_run: int
    evaluations: int
    seed: int
    wall_time: float = 0.0
    best_evaluation: Any = None
    extras: dict = field(default_factory=dict)

    def same_trajectory(self, other: "SwarmResult") -> bool:
        """Equality on everything except wall time."""
        return (
            self.algorithm == other.algorithm
            and np.array_equal(self.best_position, other.best_position)
            and self.best_fitness == other.best_fitness
            and np.array_equal(self.convergence, other.convergence)
            and np.array_equal(self.mean_fitness, other.mean_fitness)
            and self.iterations_run == other.iterations_run
            and self.seed == other.seed
        )


def attach_evaluation(result: SwarmResult, problem: Any) -> SwarmResult:
    evaluate = getattr(problem, "evaluate", None)
    if callable(evaluate):
        result.best_evaluation = evaluate(result.best_position)
    return result
