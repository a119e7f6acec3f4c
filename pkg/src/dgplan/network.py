"""Network data model, admittance matrix and DG injection."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


class NetworkError(ValueError):
    """Raised for invalid network input (bad impedance, misplaced DG, ...)."""


class StructuralError(NetworkError):
    """Raised when the network graph itself is unusable (e.g. disconnected)."""


class BusKind(str, enum.Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True)
class Bus:
    """A network node. Powers and shunts are per-unit on the system base."""

    id: int
    kind: BusKind
    p_demand: float = 0.0
    q_demand: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0
    v_setpoint: float = 1.0
    v_min: float = 0.94
    v_max: float = 1.06
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Branch:
    """Series impedance with total line charging; ``tap_ratio`` sits on the from side."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    rating: float | None = None

    @property
    def series_admittance(self) -> complex:
        z = complex(self.r, self.x)
        if z == 0:
            raise NetworkError(f"branch {self.from_bus}-{self.to_bus} has zero impedance")
        return 1.0 / z


@dataclass(frozen=True)
class Network:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    name: str = ""
    base_kv: float = 0.0
    source: str = ""
    # (v_min, v_max) applied to every bus when evaluating DG sizings
    v_band: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        if self.v_band is not None:
            object.__setattr__(self, "v_band", tuple(float(v) for v in self.v_band))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def index_of(self, bus_id: int) -> int:
        for i, bus in enumerate(self.buses):
            if bus.id == bus_id:
                return i
        raise KeyError(bus_id)

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.index_of(bus_id)]

    @property
    def slack_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    def kind_indices(self, kind: BusKind) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is kind], dtype=int)

    def voltage_band(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-bus (v_min, v_max), with the case-level override taking precedence."""
        if self.v_band is not None:
            lo, hi = self.v_band
            return np.full(self.n_bus, lo), np.full(self.n_bus, hi)
        return (np.array([b.v_min for b in self.buses]), np.array([b.v_max for b in self.buses]))

    def total_demand(self) -> tuple[float, float]:
        """Total (P, Q) demand in MW / MVAr."""
        p = math.fsum(b.p_demand * self.base_mva for b in self.buses)
        q = math.fsum(b.q_demand * self.base_mva for b in self.buses)
        return p, q


@dataclass(frozen=True)
class DgPlacement:
    """DG units as ``{bus id: size in MW}``; one unit per bus."""

    entries: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", {int(k): float(v) for k, v in dict(self.entries).items()})

    @classmethod
    def from_sizes(cls, buses: Iterable[int], sizes: Iterable[float]) -> "DgPlacement":
        buses, sizes = list(buses), list(sizes)
        if len(buses) != len(sizes):
            raise NetworkError("bus and size lists differ in length")
        if len(set(buses)) != len(buses):
            raise NetworkError("a bus appears more than once in the placement")
        return cls(dict(zip(buses, sizes)))

    @property
    def total_mw(self) -> float:
        return float(sum(self.entries.values()))

    def __len__(self):
        return len(self.entries)


def _components(n: int, edges: Iterable[tuple[int, int]]) -> int:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(n)})


def validate_network(network: Network) -> list[str]:
    """Return a list of human-readable findings; empty when the network is valid."""
    findings: list[str] = []
    if not (network.base_mva > 0):
        findings.append(f"base_mva must be positive, got {network.base_mva}")
    if not network.buses:
        findings.append("network has no buses")
        return findings

    seen: set[int] = set()
    for bus in network.buses:
        if bus.id in seen:
            findings.append(f"bus {bus.id}: duplicate id")
        seen.add(bus.id)
        if bus.id <= 0:
            findings.append(f"bus {bus.id}: id must be a positive integer")
        if not bus.v_min < bus.v_max:
            findings.append(f"bus {bus.id}: v_min {bus.v_min} not below v_max {bus.v_max}")
        for name in ("p_demand", "q_demand", "p_gen", "q_gen", "v_setpoint", "shunt_g", "shunt_b"):
            if not math.isfinite(getattr(bus, name)):
                findings.append(f"bus {bus.id}: {name} is not finite")
        if bus.kind is not BusKind.PQ and not bus.v_setpoint > 0:
            findings.append(f"bus {bus.id}: voltage setpoint must be positive")

    n_slack = sum(b.kind is BusKind.SLACK for b in network.buses)
    if n_slack == 0:
        findings.append("no slack bus")
    elif n_slack > 1:
        ids = [b.id for b in network.buses if b.kind is BusKind.SLACK]
        findings.append(f"multiple slack buses: {ids}")

    if network.v_band is not None and not network.v_band[0] < network.v_band[1]:
        findings.append(f"voltage band {network.v_band} is empty")

    index = {b.id: i for i, b in enumerate(network.buses)}
    edges = []
    for k, br in enumerate(network.branches):
        label = f"branch {k} ({br.from_bus}-{br.to_bus})"
        dangling = [b for b in (br.from_bus, br.to_bus) if b not in index]
        if dangling:
            findings.append(f"{label}: dangling endpoint {dangling}")
        if br.from_bus == br.to_bus:
            findings.append(f"{label}: from_bus equals to_bus")
        if not (math.isfinite(br.r) and math.isfinite(br.x) and math.isfinite(br.b_charging)):
            findings.append(f"{label}: non-finite parameters")
        if br.r < 0:
            findings.append(f"{label}: negative resistance")
        if abs(complex(br.r, br.x)) == 0:
            findings.append(f"{label}: zero impedance")
        if not br.tap_ratio > 0:
            findings.append(f"{label}: tap ratio must be positive")
        if not dangling:
            edges.append((index[br.from_bus], index[br.to_bus]))

    if _components(len(network.buses), edges) > 1:
        findings.append("network is disconnected")
    return findings


def _branch_blocks(branch: Branch) -> tuple[complex, complex, complex, complex]:
    """(Y_ff, Y_ft, Y_tf, Y_tt) of the branch pi-model."""
    y = branch.series_admittance
    half_b = 0.5j * branch.b_charging
    t = branch.tap_ratio
    return (y + half_b) / (t * t), -y / t, -y / t, y + half_b


def build_admittance_matrix(network: Network) -> np.ndarray:
    """Dense bus admittance matrix (per-unit), rows/columns in bus order."""
    n = network.n_bus
    index = {b.id: i for i, b in enumerate(network.buses)}
    edges = []
    for br in network.branches:
        if br.from_bus not in index or br.to_bus not in index:
            raise StructuralError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        edges.append((index[br.from_bus], index[br.to_bus]))
    if _components(n, edges) > 1:
        raise StructuralError("network is disconnected")

    Y = np.zeros((n, n), dtype=complex)
    for br, (f, t) in zip(network.branches, edges):
        yff, yft, ytf, ytt = _branch_blocks(br)
        Y[f, f] += yff
        Y[f, t] += yft
        Y[t, f] += ytf
        Y[t, t] += ytt
    for i, bus in enumerate(network.buses):
        Y[i, i] += complex(bus.shunt_g, bus.shunt_b)
    return Y


def branch_admittances(network: Network) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised branch data: from/to indices and a (n_branch, 4) array of pi-model blocks."""
    index = {b.id: i for i, b in enumerate(network.buses)}
    f = np.array([index[br.from_bus] for br in network.branches], dtype=int)
    t = np.array([index[br.to_bus] for br in network.branches], dtype=int)
    blocks = np.array([_branch_blocks(br) for br in network.branches], dtype=complex).reshape(-1, 4)
    return f, t, blocks


def apply_dg_injections(network: Network, placement: DgPlacement) -> Network:
    """Copy of ``network`` with each DG size (MW) added to the bus generation.

    DG units are unity power factor, so only ``p_gen`` changes.
    """
    if not placement.entries:
        return network
    index = {b.id: i for i, b in enumerate(network.buses)}
    buses = list(network.buses)
    for bus_id, size_mw in placement.entries.items():
        if bus_id not in index:
            raise NetworkError(f"DG placed on unknown bus {bus_id}")
        bus = buses[index[bus_id]]
        if bus.kind is BusKind.SLACK:
            raise NetworkError(f"DG placed on slack bus {bus_id}")
        buses[index[bus_id]] = dataclasses.replace(bus, p_gen=bus.p_gen + size_mw / network.base_mva)
    return dataclasses.replace(network, buses=tuple(buses))
