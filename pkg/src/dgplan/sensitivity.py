"""Loss sensitivity factors and candidate-bus selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network
from .objectives import loss_coefficients
from .powerflow import CompiledNetwork, PowerFlowSolution, jacobian_matrix, compile_network, injection_derivatives


class SensitivityError(ValueError):
    pass


def loss_sensitivity(
    network: Network | CompiledNetwork,
    base_solution: PowerFlowSolution,
    method: str = "exact",
) -> dict[int, float]:
    """dP_L/dP_j for every non-slack bus j (MW of loss per MW injected at j).

    ``method="exact"`` differentiates the load-flow loss through the converged
    Jacobian: with P_L(x) the branch loss as a function of the state x, the
    sensitivity to scheduled injection at bus j is (J^-T grad P_L)_j. Scheduled
    Q at PQ buses and |V| at PV buses stay fixed; the slack picks up the rest.

    ``method="coefficients"`` is the fixed-voltage form
    2 * sum_k (alpha_jk P_k - beta_jk Q_k) with alpha/beta on the
    slack-referenced bus impedance matrix. It ignores how voltages and PV-bus
    reactive output move with the injection, so it is only a first estimate.
    """
    if not base_solution.converged:
        raise SensitivityError("loss sensitivity needs a converged base-case solution")
    c = compile_network(network)
    if method == "coefficients":
        coef = loss_coefficients(c, base_solution, reference="slack")
        P, Q = base_solution.p_injected, base_solution.q_injected
        lsf = 2.0 * (coef.alpha @ P - coef.beta @ Q)
        return {int(c.bus_ids[i]): float(lsf[i]) for i in c.pvpq}
    if method != "exact":
        raise SensitivityError(f"unknown sensitivity method {method!r}")

    V = base_solution.state.complex_voltage
    dS_dVa, dS_dVm = injection_derivatives(c, V)
    # branch loss = sum of all real injections minus shunt conductance draw
    grad = np.concatenate([
        dS_dVa[:, c.pvpq].real.sum(axis=0),
        dS_dVm[:, c.pq].real.sum(axis=0) - 2.0 * c.shunt.real[c.pq] * np.abs(V[c.pq]),
    ])
    try:
        lam = np.linalg.solve(jacobian_matrix(c, V).T, grad)
    except np.linalg.LinAlgError:
        raise SensitivityError("Jacobian is singular at the base case") from None
    return {int(c.bus_ids[i]): float(lam[k]) for k, i in enumerate(c.pvpq)}


def normalize(values) -> np.ndarray:
    """Affine map onto [0, 1]: (x - min) / (max - min)."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise SensitivityError("normalisation needs at least two values")
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise SensitivityError("all sensitivity values are equal; normalisation undefined")
    return (x - lo) / (hi - lo)


@dataclass(frozen=True)
class SensitivityRanking:
    bus_ids: tuple[int, ...]  # non-slack buses in network order
    raw: tuple[float, ...]
    normalized: tuple[float, ...]
    order: tuple[int, ...]  # bus ids, closest-to-zero normalised value first

    def candidates(self, k: int) -> list[int]:
        return select_candidates(self, k)

    def rows(self):
        """(rank, bus, raw, normalized) in ranking order."""
        pos = {b: i for i, b in enumerate(self.bus_ids)}
        return [(r + 1, b, self.raw[pos[b]], self.normalized[pos[b]]) for r, b in enumerate(self.order)]


def rank_buses(network: Network | CompiledNetwork, base_solution: PowerFlowSolution, method: str = "exact") -> SensitivityRanking:
    lsf = loss_sensitivity(network, base_solution, method)
    ids = list(lsf)
    raw = np.array([lsf[b] for b in ids])
    norm = normalize(raw)
    order = sorted(ids, key=lambda b: (abs(norm[ids.index(b)]), b))
    return SensitivityRanking(tuple(ids), tuple(raw.tolist()), tuple(norm.tolist()), tuple(order))


def select_candidates(ranking: SensitivityRanking, k: int) -> list[int]:
    """The ``k`` buses whose normalised sensitivity is closest to zero."""
    if not 1 <= k <= len(ranking.order):
        raise SensitivityError(f"k must be between 1 and {len(ranking.order)}, got {k}")
    return list(ranking.order[:k])
