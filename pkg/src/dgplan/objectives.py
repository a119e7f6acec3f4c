"""Loss formulas and the penalised fitness used to size DG units."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .network import BusKind, DgPlacement, Network, validate_network
from .powerflow import (
    CompiledNetwork,
    PowerFlowSolution,
    SingularJacobianError,
    SolverOptions,
    compile_network,
    solve,
)


class Mode(str, enum.Enum):
    TECHNICAL = "technical"
    TECHNO_ECONOMIC = "techno-economic"


@dataclass(frozen=True)
class LossCoefficients:
    """alpha_ij = r_ij cos(d_i - d_j) / (V_i V_j), beta_ij = r_ij sin(d_i - d_j) / (V_i V_j).

    ``r_ij`` is the real part of the bus impedance matrix. With
    ``reference="ground"`` that matrix is the full inverse of Ybus, which makes
    the quadratic loss form exact. With ``reference="slack"`` the slack row and
    column are removed before inverting (and left zero), which is the form whose
    derivative tracks the load-flow loss sensitivity.
    """

    alpha: np.ndarray
    beta: np.ndarray
    reference: str = "ground"


def loss_impedance(network: Network | CompiledNetwork, reference: str = "ground") -> np.ndarray:
    c = compile_network(network)
    if reference == "ground":
        # shunt-free networks have a singular Ybus, which inv() rarely detects in
        # floating point; injections then sum to zero current, so the
        # pseudo-inverse gives the same quadratic form
        if np.linalg.cond(c.Y) < 1e12:
            return np.linalg.inv(c.Y)
        return np.linalg.pinv(c.Y)
    if reference == "slack":
        keep = c.pvpq
        Z = np.zeros_like(c.Y)
        Z[np.ix_(keep, keep)] = np.linalg.inv(c.Y[np.ix_(keep, keep)])
        return Z
    raise ValueError(f"unknown reference {reference!r}")


def loss_coefficients(
    network: Network | CompiledNetwork,
    solution: PowerFlowSolution,
    reference: str = "ground",
    Z: np.ndarray | None = None,
) -> LossCoefficients:
    if Z is None:
        Z = loss_impedance(network, reference)
    v, d = solution.v, solution.delta
    scale = Z.real / np.outer(v, v)
    dd = d[:, None] - d[None, :]
    return LossCoefficients(alpha=scale * np.cos(dd), beta=scale * np.sin(dd), reference=reference)


def exact_loss(
    network: Network | CompiledNetwork,
    solution: PowerFlowSolution,
    Z: np.ndarray | None = None,
) -> float:
    """Real power loss in MW from the alpha/beta quadratic form over bus injections.

    P_L = sum_ij alpha_ij (P_i P_j + Q_i Q_j) + beta_ij (Q_i P_j - P_i Q_j)
    """
    coef = loss_coefficients(network, solution, "ground", Z)
    P, Q = solution.p_injected, solution.q_injected
    a_term = P @ coef.alpha @ P + Q @ coef.alpha @ Q
    b_term = Q @ coef.beta @ P - P @ coef.beta @ Q
    return float((a_term + b_term) * solution.base_mva)


def voltage_deviation(solution: PowerFlowSolution, v_ref: float = 1.0) -> float:
    """Sum over PQ buses of |V_i - v_ref|."""
    return float(np.abs(solution.v[solution.pq] - v_ref).sum())


@dataclass(frozen=True)
class CostParameters:
    c_dg: float = 1.0  # currency per MW
    tariff: float = 1.0
    k_conn: float = 1.0

    def __post_init__(self):
        for name in ("c_dg", "tariff", "k_conn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def dg_cost(placement: DgPlacement | Sequence[float], cost: CostParameters) -> float:
    """k_conn * T * c_dg * (total DG MW)."""
    if isinstance(placement, DgPlacement):
        total = placement.total_mw
    else:
        total = float(np.sum(placement))
    return cost.k_conn * cost.tariff * cost.c_dg * total


@dataclass(frozen=True)
class PenaltyWeights:
    voltage: float = 1e4  # per squared pu violation, summed over buses
    rating: float = 1e4  # per squared pu overload, summed over branches
    nonconvergence: float = 1e7


VOLTAGE_POLICIES = ("no-worse-high", "no-worse", "strict")


@dataclass
class Evaluation:
    sizes: np.ndarray
    fitness: float
    objective: float
    p_loss: float  # MW
    q_loss: float  # MVAr
    vd: float
    dg_cost: float
    penalties: dict[str, float]
    converged: bool
    solution: PowerFlowSolution | None = None
    balance_residual: tuple[float, float] = (0.0, 0.0)

    @property
    def total_dg_mw(self) -> float:
        return float(np.sum(self.sizes))


@dataclass
class SizingProblem:
    """Everything needed to score a DG sizing vector on one network.

    Construction solves the base case once; :meth:`evaluate` then reuses the
    compiled network, the loss impedance and the base voltages as warm start.
    """

    network: Network
    candidates: Sequence[int]
    dg_min: float = 1.0
    dg_max: float = 50.0
    mode: Mode = Mode.TECHNICAL
    cost: CostParameters = field(default_factory=CostParameters)
    penalties: PenaltyWeights = field(default_factory=PenaltyWeights)
    v_band: tuple[float, float] | None = None
    w_cost: float = 1.0
    cost_scale: float | None = None  # MW; defaults to the base-case loss
    solver: SolverOptions = field(default_factory=SolverOptions)
    # "strict": penalise any voltage outside the band.
    # "no-worse": a bus already outside the band in the base case is only
    # penalised for moving further out than its base-case voltage.
    # "no-worse-high": as "no-worse" for the upper limit only. Real-power DG
    # raises voltages, so it can never clear a base-case overvoltage, but it
    # can lift an undervoltage back into the band.
    voltage_policy: str = "no-worse-high"

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.voltage_policy not in VOLTAGE_POLICIES:
            raise ValueError(f"voltage_policy must be one of {VOLTAGE_POLICIES}")
        self.candidates = [int(b) for b in self.candidates]
        if not self.candidates:
            raise ValueError("candidate list is empty")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidate buses repeat")
        if not self.dg_min < self.dg_max:
            raise ValueError("dg_min must be below dg_max")
        findings = validate_network(self.network)
        if findings:
            raise ValueError("invalid network: " + "; ".join(findings))
        for b in self.candidates:
            if b not in self.network.bus_ids:
                raise ValueError(f"candidate bus {b} not in network")
            if self.network.bus(b).kind is BusKind.SLACK:
                raise ValueError(f"candidate bus {b} is the slack bus")

        self._compiled = compile_network(self.network)
        self._cand_idx = np.array([self.network.index_of(b) for b in self.candidates])
        self._Z = loss_impedance(self._compiled, "ground")
        band = self.v_band if self.v_band is not None else self.network.v_band
        if band is not None:
            self._vmin = np.full(self.network.n_bus, band[0])
            self._vmax = np.full(self.network.n_bus, band[1])
        else:
            self._vmin, self._vmax = self.network.voltage_band()
        self.base_solution = solve(self._compiled, self.solver)
        if not self.base_solution.converged:
            raise ValueError("base case load flow does not converge")
        if self.voltage_policy in ("no-worse", "no-worse-high"):
            self._vmax = np.maximum(self._vmax, self.base_solution.v)
        if self.voltage_policy == "no-worse":
            self._vmin = np.minimum(self._vmin, self.base_solution.v)
        self.base_loss = exact_loss(self._compiled, self.base_solution, self._Z)
        self.dg_cost_max = dg_cost(np.full(self.dimension, self.dg_max), self.cost)
        if self.cost_scale is None:
            self.cost_scale = self.base_loss

    @property
    def dimension(self) -> int:
        return len(self.candidates)

    @property
    def lower(self) -> np.ndarray:
        return np.full(self.dimension, float(self.dg_min))

    @property
    def upper(self) -> np.ndarray:
        return np.full(self.dimension, float(self.dg_max))

    @property
    def effective_band(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-bus (vmin, vmax) actually used by the voltage penalty."""
        return self._vmin.copy(), self._vmax.copy()

    def placement(self, sizes: Sequence[float]) -> DgPlacement:
        return DgPlacement.from_sizes(self.candidates, sizes)

    def penalty_terms(self, sol: PowerFlowSolution) -> dict[str, float]:
        v = sol.v
        over = np.maximum(0.0, v - self._vmax)
        under = np.maximum(0.0, self._vmin - v)
        pen = {"voltage": self.penalties.voltage * float(np.sum(over**2) + np.sum(under**2))}
        rating = self._compiled.br_rating
        rated = ~np.isnan(rating)
        if rated.any():
            excess = np.maximum(0.0, sol.branch_current[rated] - rating[rated])
            pen["rating"] = self.penalties.rating * float(np.sum(excess**2))
        return pen

    def evaluate(self, sizes: Sequence[float]) -> Evaluation:
        x = np.array(sizes, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"expected {self.dimension} sizes, got shape {x.shape}")
        slack = 1e-9 * (self.dg_max - self.dg_min)
        if np.any(x < self.dg_min - slack) or np.any(x > self.dg_max + slack):
            raise ValueError(f"sizes {x} outside [{self.dg_min}, {self.dg_max}] MW")

        extra = np.zeros(self._compiled.n_bus)
        extra[self._cand_idx] = x / self.network.base_mva
        cost = dg_cost(x, self.cost)
        try:
            sol = solve(self._compiled.with_injection(extra), self.solver, initial=self.base_solution.state)
        except SingularJacobianError:
            sol = None
        if sol is None or not sol.converged:
            nan = float("nan")
            penalty = {"nonconvergence": self.penalties.nonconvergence}
            return Evaluation(x, self.penalties.nonconvergence, 0.0, nan, nan, nan, cost, penalty, False, sol)

        p_loss = exact_loss(self._compiled, sol, self._Z)
        objective = p_loss
        if self.mode is Mode.TECHNO_ECONOMIC and self.dg_cost_max > 0:
            objective = p_loss + self.w_cost * (cost / self.dg_cost_max) * self.cost_scale
        penalties = self.penalty_terms(sol)
        residual = sol.balance_residual(self._compiled)
        bound = 10 * self.solver.tolerance
        assert abs(residual[0]) <= bound and abs(residual[1]) <= bound, f"power balance off by {residual}"
        return Evaluation(
            sizes=x,
            fitness=objective + sum(penalties.values()),
            objective=objective,
            p_loss=p_loss,
            q_loss=sol.q_loss_total,
            vd=voltage_deviation(sol, 1.0),
            dg_cost=cost,
            penalties=penalties,
            converged=True,
            solution=sol,
            balance_residual=residual,
        )

    def __call__(self, sizes: Sequence[float]) -> float:
        return self.evaluate(sizes).fitness


def evaluate(problem: SizingProblem, sizes: Sequence[float]) -> Evaluation:
    return problem.evaluate(sizes)
