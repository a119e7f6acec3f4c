"""Independent reference computations used by the tests.

Nothing here imports the production admittance, mismatch or Jacobian code;
each oracle rebuilds what it needs from the raw bus/branch records.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

from dgplan.network import Branch, Bus, BusKind, Network
from dgplan.powerflow import SolverOptions, solve


def primitive_ybus(network: Network) -> np.ndarray:
    """Accumulate each branch's 2x2 primitive admittance one element at a time."""
    pos = {}
    for k, bus in enumerate(network.buses):
        pos[bus.id] = k
    n = len(network.buses)
    Y = [[0j] * n for _ in range(n)]
    for br in network.branches:
        i, j = pos[br.from_bus], pos[br.to_bus]
        z = complex(br.r, br.x)
        y = 1 / z
        a = br.tap_ratio
        shunt = complex(0, br.b_charging / 2)
        prim = [[(y + shunt) / (a * a), -y / a], [-y / a, y + shunt]]
        idx = [i, j]
        for p in range(2):
            for q in range(2):
                Y[idx[p]][idx[q]] = Y[idx[p]][idx[q]] + prim[p][q]
    for k, bus in enumerate(network.buses):
        Y[k][k] = Y[k][k] + complex(bus.shunt_g, bus.shunt_b)
    return np.array(Y)


def injections_polar(Y: np.ndarray, v, delta):
    """P_i = sum_j |V_i||V_j||Y_ij| cos(theta_ij - d_i + d_j), Q_i = -sum ... sin(...)."""
    n = len(v)
    P = [0.0] * n
    Q = [0.0] * n
    for i in range(n):
        for j in range(n):
            mag, theta = abs(Y[i, j]), cmath.phase(Y[i, j])
            P[i] += v[i] * v[j] * mag * math.cos(theta - delta[i] + delta[j])
            Q[i] -= v[i] * v[j] * mag * math.sin(theta - delta[i] + delta[j])
    return np.array(P), np.array(Q)


def naive_mismatch(network: Network, v, delta) -> np.ndarray:
    Y = primitive_ybus(network)
    P, Q = injections_polar(Y, v, delta)
    out_p, out_q = [], []
    for i, bus in enumerate(network.buses):
        if bus.kind is not BusKind.SLACK:
            out_p.append(bus.p_gen - bus.p_demand - P[i])
    for i, bus in enumerate(network.buses):
        if bus.kind is BusKind.PQ:
            out_q.append(bus.q_gen - bus.q_demand - Q[i])
    return np.array(out_p + out_q)


def gauss_seidel(network: Network, tol: float = 1e-13, max_sweeps: int = 200_000):
    """Plain Gauss-Seidel load flow with PV magnitude correction; returns (v, delta)."""
    Y = primitive_ybus(network)
    n = len(network.buses)
    V = []
    for bus in network.buses:
        V.append(complex(bus.v_setpoint if bus.kind is not BusKind.PQ else 1.0, 0.0))
    for _ in range(max_sweeps):
        worst = 0.0
        for i, bus in enumerate(network.buses):
            if bus.kind is BusKind.SLACK:
                continue
            s_i = sum(Y[i, j] * V[j] for j in range(n))
            P = bus.p_gen - bus.p_demand
            if bus.kind is BusKind.PV:
                Q = -(V[i].conjugate() * s_i).imag
            else:
                Q = bus.q_gen - bus.q_demand
            others = s_i - Y[i, i] * V[i]
            new = ((P - 1j * Q) / V[i].conjugate() - others) / Y[i, i]
            if bus.kind is BusKind.PV:
                new = bus.v_setpoint * new / abs(new)
            worst = max(worst, abs(new - V[i]))
            V[i] = new
        if worst < tol:
            break
    else:
        raise RuntimeError("Gauss-Seidel did not converge")
    V = np.array(V)
    return np.abs(V), np.angle(V)


def random_network(rng: np.random.Generator, n_bus: int, n_pv: int = 0, extra_edges: int = 1, load_scale: float = 0.3) -> Network:
    """Connected random network: bus 1 slack, a random spanning tree plus a few extra lines."""
    buses = [Bus(1, BusKind.SLACK, v_setpoint=1.0 + 0.04 * rng.random())]
    for k in range(2, n_bus + 1):
        kind = BusKind.PV if k <= 1 + n_pv else BusKind.PQ
        pd = load_scale * rng.uniform(0.2, 1.0)
        qd = load_scale * rng.uniform(0.05, 0.5)
        pg = load_scale * rng.uniform(0.3, 1.0) if kind is BusKind.PV else 0.0
        buses.append(
            Bus(k, kind, p_demand=pd, q_demand=qd, p_gen=pg,
                v_setpoint=1.0 + 0.04 * rng.random() if kind is BusKind.PV else 1.0)
        )
    edges = set()
    for k in range(2, n_bus + 1):
        edges.add((int(rng.integers(1, k)), k))
    tries = 0
    while len(edges) < n_bus - 1 + extra_edges and tries < 50:
        a, b = sorted(rng.choice(np.arange(1, n_bus + 1), size=2, replace=False).tolist())
        edges.add((a, b))
        tries += 1
    branches = [
        Branch(a, b, r=rng.uniform(0.005, 0.05), x=rng.uniform(0.03, 0.2), b_charging=rng.uniform(0.0, 0.05))
        for a, b in sorted(edges)
    ]
    return Network(100.0, tuple(buses), tuple(branches), name=f"random{n_bus}")


def fd_loss_sensitivity(network: Network, bus_id: int, step: float = 1e-4) -> float:
    """Central difference of branch-sum real loss (pu) w.r.t. net injection at one bus."""
    from dataclasses import replace

    def loss_with(delta_p):
        buses = tuple(replace(b, p_gen=b.p_gen + delta_p) if b.id == bus_id else b for b in network.buses)
        sol = solve(replace(network, buses=buses), SolverOptions(tolerance=1e-12))
        assert sol.converged
        return sol.p_loss_total / network.base_mva

    return (loss_with(step) - loss_with(-step)) / (2 * step)
