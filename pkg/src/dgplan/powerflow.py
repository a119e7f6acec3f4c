"""Newton-Raphson AC load flow in polar coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import BusKind, Network, branch_admittances, build_admittance_matrix, validate_network


class PowerFlowError(RuntimeError):
    pass


class SingularJacobianError(PowerFlowError):
    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"Jacobian is singular at iteration {iteration}")


@dataclass
class SolverOptions:
    tolerance: float = 1e-8
    max_iterations: int = 50
    flat_start: bool = True


@dataclass(frozen=True)
class PowerFlowState:
    """Bus voltage magnitudes (pu) and angles (rad), in bus order."""

    v: np.ndarray
    delta: np.ndarray
    iteration: int = 0

    @property
    def complex_voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.delta)


class CompiledNetwork:
    """Array form of a :class:`Network` used by the solver.

    Building the admittance matrix dominates setup cost, so callers that solve
    the same topology many times with different injections compile once and
    use :meth:`with_injection`.
    """

    def __init__(self, network: Network, Y: np.ndarray | None = None):
        self.network = network
        self.base_mva = network.base_mva
        self.bus_ids = np.array(network.bus_ids)
        self.Y = build_admittance_matrix(network) if Y is None else Y
        self.slack = network.slack_index
        kinds = [b.kind for b in network.buses]
        self.pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
        self.pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
        self.pvpq = np.array([i for i, k in enumerate(kinds) if k is not BusKind.SLACK], dtype=int)
        self.v_set = np.array([1.0 if k is BusKind.PQ else b.v_setpoint for k, b in zip(kinds, network.buses)])
        self.p_sched = np.array([b.p_gen - b.p_demand for b in network.buses])
        self.q_sched = np.array([b.q_gen - b.q_demand for b in network.buses])
        self.p_demand = np.array([b.p_demand for b in network.buses])
        self.q_demand = np.array([b.q_demand for b in network.buses])
        self.shunt = np.array([complex(b.shunt_g, b.shunt_b) for b in network.buses])
        self.br_from, self.br_to, self.br_blocks = branch_admittances(network)
        self.br_r = np.array([br.r for br in network.branches])
        self.br_x = np.array([br.x for br in network.branches])
        self.br_tap = np.array([br.tap_ratio for br in network.branches])
        self.br_y = np.array([1.0 / complex(br.r, br.x) for br in network.branches], dtype=complex)
        self.br_rating = np.array([np.nan if br.rating is None else br.rating for br in network.branches])

    def with_injection(self, extra_p: np.ndarray) -> "CompiledNetwork":
        """Shallow copy whose scheduled real injection is increased by ``extra_p`` (pu, per bus)."""
        clone = object.__new__(CompiledNetwork)
        clone.__dict__.update(self.__dict__)
        clone.p_sched = self.p_sched + extra_p
        return clone

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)


def compile_network(network: Network | CompiledNetwork) -> CompiledNetwork:
    if isinstance(network, CompiledNetwork):
        return network
    return CompiledNetwork(network)


def flat_start(network: Network | CompiledNetwork) -> PowerFlowState:
    c = compile_network(network)
    return PowerFlowState(v=c.v_set.copy(), delta=np.zeros(c.n_bus))


def bus_injections(network: Network | CompiledNetwork, state: PowerFlowState) -> np.ndarray:
    """Calculated complex injection S_i = V_i conj(sum_j Y_ij V_j), per-unit."""
    c = compile_network(network)
    V = state.complex_voltage
    return V * np.conj(c.Y @ V)


def compute_mismatch(network: Network | CompiledNetwork, state: PowerFlowState) -> np.ndarray:
    """[dP (non-slack buses); dQ (PQ buses)] = scheduled minus calculated."""
    c = compile_network(network)
    S = bus_injections(c, state)
    return np.concatenate([c.p_sched[c.pvpq] - S.real[c.pvpq], c.q_sched[c.pq] - S.imag[c.pq]])


@dataclass
class Jacobian:
    """Jacobian of calculated injections [P; Q] w.r.t. [delta (non-slack); V (PQ)].

    Laid out as ``[[J1, J3], [J2, J4]]`` with J1 = dP/d(delta), J2 = dQ/d(delta),
    J3 = dP/dV, J4 = dQ/dV.
    """

    matrix: np.ndarray
    rows: list[tuple[int, str]]
    cols: list[tuple[int, str]]
    n_p: int
    n_angle: int

    @property
    def J1(self):
        return self.matrix[: self.n_p, : self.n_angle]

    @property
    def J3(self):
        return self.matrix[: self.n_p, self.n_angle :]

    @property
    def J2(self):
        return self.matrix[self.n_p :, : self.n_angle]

    @property
    def J4(self):
        return self.matrix[self.n_p :, self.n_angle :]

    @property
    def shape(self):
        return self.matrix.shape


def injection_derivatives(c: CompiledNetwork, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full (n x n) dS/d(angle) and dS/d|V| for complex injections S = V conj(Y V)."""
    Ibus = c.Y @ V
    Vnorm = V / np.abs(V)
    dS_dVm = V[:, None] * np.conj(c.Y * Vnorm[None, :])
    dS_dVm[np.diag_indices_from(dS_dVm)] += np.conj(Ibus) * Vnorm
    dS_dVa = -1j * V[:, None] * np.conj(c.Y * V[None, :])
    dS_dVa[np.diag_indices_from(dS_dVa)] += 1j * V * np.conj(Ibus)
    return dS_dVa, dS_dVm


def jacobian_matrix(c: CompiledNetwork, V: np.ndarray) -> np.ndarray:
    dS_dVa, dS_dVm = injection_derivatives(c, V)
    pvpq, pq = c.pvpq, c.pq
    top = np.hstack([dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real])
    bottom = np.hstack([dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag])
    return np.vstack([top, bottom])


def assemble_jacobian(network: Network | CompiledNetwork, state: PowerFlowState) -> Jacobian:
    c = compile_network(network)
    ids = c.bus_ids
    rows = [(int(ids[i]), "P") for i in c.pvpq] + [(int(ids[i]), "Q") for i in c.pq]
    cols = [(int(ids[i]), "delta") for i in c.pvpq] + [(int(ids[i]), "v") for i in c.pq]
    return Jacobian(
        matrix=jacobian_matrix(c, state.complex_voltage),
        rows=rows,
        cols=cols,
        n_p=len(c.pvpq),
        n_angle=len(c.pvpq),
    )


@dataclass
class BranchFlows:
    s_from: np.ndarray  # complex power entering at the from end, pu
    s_to: np.ndarray
    i_series: np.ndarray  # current through the series impedance, pu
    loss: np.ndarray  # complex series loss |I|^2 (r + jx), pu


def branch_flows(network: Network | CompiledNetwork, state: PowerFlowState) -> BranchFlows:
    c = compile_network(network)
    V = state.complex_voltage
    vf, vt = V[c.br_from], V[c.br_to]
    yff, yft, ytf, ytt = c.br_blocks.T
    i_f = yff * vf + yft * vt
    i_t = ytf * vf + ytt * vt
    i_series = (vf / c.br_tap - vt) * c.br_y
    mag2 = np.abs(i_series) ** 2
    return BranchFlows(
        s_from=vf * np.conj(i_f),
        s_to=vt * np.conj(i_t),
        i_series=i_series,
        loss=mag2 * c.br_r + 1j * mag2 * c.br_x,
    )


def total_losses(network: Network | CompiledNetwork, state: PowerFlowState) -> tuple[float, float]:
    """Sum of branch series losses as (MW, MVAr)."""
    c = compile_network(network)
    loss = branch_flows(c, state).loss
    return float(loss.real.sum() * c.base_mva), float(loss.imag.sum() * c.base_mva)


@dataclass
class PowerFlowSolution:
    state: PowerFlowState
    p_injected: np.ndarray  # pu, per bus
    q_injected: np.ndarray
    p_loss_total: float  # MW
    q_loss_total: float  # MVAr
    branch_losses: np.ndarray  # (n_branch, 2): MW, MVAr
    converged: bool
    max_mismatch: float  # pu
    iterations: int
    bus_ids: np.ndarray
    pq: np.ndarray
    base_mva: float
    mismatch_history: list[float] = field(default_factory=list)
    branch_current: np.ndarray | None = None  # |I| through the series element, pu
    # reactive power supplied by line charging and bus shunts, and real power
    # drawn by shunt conductances; needed to close the power balance
    q_shunt_mvar: float = 0.0
    p_shunt_mw: float = 0.0

    @property
    def v(self) -> np.ndarray:
        return self.state.v

    @property
    def delta(self) -> np.ndarray:
        return self.state.delta

    @property
    def delta_degrees(self) -> np.ndarray:
        return np.degrees(self.state.delta)

    def balance_residual(self, network: Network | CompiledNetwork) -> tuple[float, float]:
        """(generation - demand - losses) for P and Q, per-unit."""
        c = compile_network(network)
        p_gen = self.p_injected + c.p_demand
        q_gen = self.q_injected + c.q_demand
        rp = p_gen.sum() - c.p_demand.sum() - (self.p_loss_total + self.p_shunt_mw) / self.base_mva
        rq = q_gen.sum() - c.q_demand.sum() - (self.q_loss_total - self.q_shunt_mvar) / self.base_mva
        return float(rp), float(rq)


def _finish(c: CompiledNetwork, V: np.ndarray, converged: bool, history: list[float], it: int) -> PowerFlowSolution:
    state = PowerFlowState(v=np.abs(V), delta=np.angle(V), iteration=it)
    S = V * np.conj(c.Y @ V)
    flows = branch_flows(c, state)
    vf = V[c.br_from] / c.br_tap
    vt = V[c.br_to]
    bc = np.array([br.b_charging for br in c.network.branches])
    q_charging = 0.5 * bc * (np.abs(vf) ** 2 + np.abs(vt) ** 2)
    vm2 = np.abs(V) ** 2
    return PowerFlowSolution(
        state=state,
        p_injected=S.real,
        q_injected=S.imag,
        p_loss_total=float(flows.loss.real.sum() * c.base_mva),
        q_loss_total=float(flows.loss.imag.sum() * c.base_mva),
        branch_losses=np.column_stack([flows.loss.real, flows.loss.imag]) * c.base_mva,
        converged=converged,
        max_mismatch=history[-1] if history else 0.0,
        iterations=it,
        bus_ids=c.bus_ids,
        pq=c.pq,
        base_mva=c.base_mva,
        mismatch_history=history,
        branch_current=np.abs(flows.i_series),
        q_shunt_mvar=float((q_charging.sum() + (c.shunt.imag * vm2).sum()) * c.base_mva),
        p_shunt_mw=float((c.shunt.real * vm2).sum() * c.base_mva),
    )


def solve(
    network: Network | CompiledNetwork,
    options: SolverOptions | None = None,
    initial: PowerFlowState | None = None,
) -> PowerFlowSolution:
    """Run Newton-Raphson until the largest mismatch is within tolerance.

    ``initial`` overrides the flat start (PV/slack magnitudes are still reset
    to their setpoints). Non-convergence returns ``converged=False``; a
    singular Jacobian raises :class:`SingularJacobianError`.
    """
    options = options or SolverOptions()
    if isinstance(network, Network):
        findings = validate_network(network)
        if findings:
            raise PowerFlowError("invalid network: " + "; ".join(findings))
    c = compile_network(network)

    if initial is not None:
        vm = initial.v.copy()
        va = initial.delta.copy()
        fixed = np.setdiff1d(np.arange(c.n_bus), c.pq)
        vm[fixed] = c.v_set[fixed]
        va[c.slack] = 0.0
    else:
        vm = c.v_set.copy()
        va = np.zeros(c.n_bus)
    V = vm * np.exp(1j * va)

    pvpq, pq = c.pvpq, c.pq
    n_angle = len(pvpq)
    history: list[float] = []
    it = 0
    while True:
        S = V * np.conj(c.Y @ V)
        mis = np.concatenate([c.p_sched[pvpq] - S.real[pvpq], c.q_sched[pq] - S.imag[pq]])
        norm = float(np.max(np.abs(mis))) if mis.size else 0.0
        history.append(norm)
        if not np.isfinite(norm):
            return _finish(c, V, False, history, it)
        if norm <= options.tolerance:
            return _finish(c, V, True, history, it)
        if it >= options.max_iterations:
            return _finish(c, V, False, history, it)
        J = jacobian_matrix(c, V)
        try:
            dx = np.linalg.solve(J, mis)
        except np.linalg.LinAlgError:
            raise SingularJacobianError(it + 1) from None
        it += 1
        va[pvpq] += dx[:n_angle]
        vm[pq] += dx[n_angle:]
        V = vm * np.exp(1j * va)

