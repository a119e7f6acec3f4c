"""Two-stage DG study: rank buses by loss sensitivity, then size DG on the chosen buses.

A run directory holds ``report.json`` (full precision, used by
:func:`verify_report`) plus CSV tables meant for plotting tools:

losses.csv, dg_sizes.csv, voltage_profile.csv, convergence.csv,
branch_losses.csv, lsf.csv, summary.csv.

``timing.json`` carries wall-clock times and is the only file that changes
between two runs of the same configuration.
"""

from __future__ import annotations

import json
import math
import os
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .caseio import BUILTIN_CASES, load_case, network_from_document, network_to_document, read_results_csv, write_results_csv
from .network import Network
from .objectives import VOLTAGE_POLICIES, CostParameters, Mode, PenaltyWeights, SizingProblem
from .powerflow import SolverOptions, solve
from .pso import PsoConfig, pso_optimize
from .sensitivity import rank_buses, select_candidates
from .woa import WoaConfig, woa_optimize

ALGORITHMS = ("pso", "woa")
MODES = tuple(m.value for m in Mode)
VERIFY_TOLERANCE = 1e-9  # MW


class ConfigError(ValueError):
    """Bad experiment configuration (maps to exit code 2)."""


def _expand(value, allowed: tuple[str, ...], what: str) -> list[str]:
    items = list(allowed) if value == "both" else ([value] if isinstance(value, str) else list(value))
    for item in items:
        if item not in allowed:
            raise ConfigError(f"unknown {what} {item!r}; expected one of {', '.join(allowed)} or 'both'")
    if not items:
        raise ConfigError(f"no {what} selected")
    return items


@dataclass
class ExperimentConfig:
    case: str
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    modes: list[str] = field(default_factory=lambda: list(MODES))
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    k: int | None = None  # defaults per built-in case, else 4
    candidates: list[int] | None = None  # explicit buses; skips the ranking choice
    pin_reference_candidates: bool = False
    dg_min: float = 1.0
    dg_max: float = 50.0
    pso: dict[str, Any] = field(default_factory=dict)
    woa: dict[str, Any] = field(default_factory=dict)
    cost: dict[str, float] = field(default_factory=dict)
    penalties: dict[str, float] = field(default_factory=dict)
    w_cost: float = 1.0
    voltage_policy: str = "no-worse-high"
    tolerance: float = 1e-8
    max_iterations: int = 50  # load flow
    out_dir: str = "dgplan-run"

    def __post_init__(self):
        self.algorithms = _expand(self.algorithms, ALGORITHMS, "algorithm")
        self.modes = _expand(self.modes, MODES, "mode")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        try:
            self.seeds = [int(s) for s in self.seeds]
        except (TypeError, ValueError):
            raise ConfigError(f"seeds must be integers, got {self.seeds!r}") from None
        if self.voltage_policy not in VOLTAGE_POLICIES:
            raise ConfigError(f"voltage_policy must be one of {', '.join(VOLTAGE_POLICIES)}")
        if not self.dg_min < self.dg_max:
            raise ConfigError("dg_min must be below dg_max")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be at least 1")
        for name, cls in (("pso", PsoConfig), ("woa", WoaConfig), ("cost", CostParameters), ("penalties", PenaltyWeights)):
            known = {f.name for f in fields(cls)} - {"seed", "dimension"}
            extra = set(getattr(self, name)) - known
            if extra:
                raise ConfigError(f"unknown {name} option(s): {', '.join(sorted(extra))}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown configuration key(s): {', '.join(sorted(extra))}")
        if "case" not in data:
            raise ConfigError("configuration needs a 'case'")
        try:
            return cls(**data)
        except TypeError as err:
            raise ConfigError(str(err)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def output_dir(self) -> Path:
        return Path(os.environ.get("DGPLAN_OUT") or self.out_dir)


@dataclass
class RunRecord:
    label: str  # "<algorithm>-<mode>"
    algorithm: str
    mode: str
    seed: int
    sizes: list[float] | None = None
    fitness: float | None = None
    p_loss: float | None = None
    q_loss: float | None = None
    vd: float | None = None
    dg_cost: float | None = None
    penalty: float | None = None
    converged: bool = False
    convergence: list[float] = field(default_factory=list)
    voltages: list[float] = field(default_factory=list)
    branch_losses: list[list[float]] = field(default_factory=list)
    wall_time: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.sizes is not None


@dataclass
class RunReport:
    config: ExperimentConfig
    network: Network
    base: dict[str, Any]
    ranking: list[tuple[int, int, float, float]]
    candidates: list[int]
    computed_candidates: list[int]
    reference_candidates: list[int] | None
    notes: list[str]
    runs: list[RunRecord]

    def labels(self) -> list[str]:
        seen: list[str] = []
        for r in self.runs:
            if r.label not in seen:
                seen.append(r.label)
        return seen

    def best(self, label: str) -> RunRecord | None:
        """Lowest-fitness successful run for a label (ties go to the earlier seed)."""
        ok = [r for r in self.runs if r.label == label and r.ok]
        return min(ok, key=lambda r: r.fitness) if ok else None

    def summary_rows(self) -> list[list[Any]]:
        rows = []
        for label in self.labels():
            runs = [r for r in self.runs if r.label == label]
            ok = [r for r in runs if r.ok]
            best = self.best(label)
            fit = [r.fitness for r in ok]
            loss = [r.p_loss for r in ok if r.p_loss is not None]
            if not ok:
                rows.append([label, len(runs), len(runs), None, None, None, None, None, None, None, None])
                continue
            spread = [min(loss), statistics.median(loss), max(loss)] if loss else [None] * 3
            rows.append([
                label, len(runs), len(runs) - len(ok), best.seed, best.p_loss,
                *spread, min(fit), statistics.median(fit), max(fit),
            ])
        return rows


def _clean(x: float | None) -> float | None:
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def choose_candidates(config: ExperimentConfig, network: Network, ranking) -> tuple[list[int], list[int], list[int] | None, list[str]]:
    meta = BUILTIN_CASES.get(config.case, {})
    k = config.k or meta.get("k", 4)
    computed = select_candidates(ranking, k)
    reference = list(meta["reference_candidates"]) if "reference_candidates" in meta else None
    notes = []
    if reference is not None and set(computed) != set(reference):
        notes.append(
            f"candidate discrepancy: sensitivity ranking selects {sorted(computed)}, "
            f"reference set is {sorted(reference)}"
        )
    if config.candidates:
        chosen = [int(b) for b in config.candidates]
        notes.append(f"candidates given explicitly: {chosen}")
    elif config.pin_reference_candidates:
        if reference is None:
            raise ConfigError(f"no reference candidate set is known for case {config.case!r}")
        chosen = reference
        notes.append(f"candidates pinned to reference set {reference}")
    else:
        chosen = computed
    return chosen, computed, reference, notes


def build_problem(config: ExperimentConfig, network: Network, candidates: list[int], mode: str) -> SizingProblem:
    return SizingProblem(
        network=network,
        candidates=candidates,
        dg_min=config.dg_min,
        dg_max=config.dg_max,
        mode=Mode(mode),
        cost=CostParameters(**config.cost),
        penalties=PenaltyWeights(**config.penalties),
        w_cost=config.w_cost,
        solver=SolverOptions(tolerance=config.tolerance, max_iterations=config.max_iterations),
        voltage_policy=config.voltage_policy,
    )


def _run_one(problem: SizingProblem, config: ExperimentConfig, algorithm: str, mode: str, seed: int) -> RunRecord:
    record = RunRecord(label=f"{algorithm}-{mode}", algorithm=algorithm, mode=mode, seed=seed)
    try:
        if algorithm == "pso":
            result = pso_optimize(problem, PsoConfig(**config.pso, seed=seed))
        else:
            result = woa_optimize(problem, WoaConfig(**config.woa, seed=seed))
    except Exception as err:  # one bad seed must not sink the study
        record.error = f"{type(err).__name__}: {err}"
        return record
    ev = result.best_evaluation
    record.sizes = [float(s) for s in result.best_position]
    record.fitness = float(result.best_fitness)
    record.p_loss = _clean(ev.p_loss)
    record.q_loss = _clean(ev.q_loss)
    record.vd = _clean(ev.vd)
    record.dg_cost = float(ev.dg_cost)
    record.penalty = float(sum(ev.penalties.values()))
    record.converged = bool(ev.converged)
    record.convergence = [float(c) for c in result.convergence]
    if ev.solution is not None:
        record.voltages = [float(v) for v in ev.solution.v]
        record.branch_losses = ev.solution.branch_losses.tolist()
    record.wall_time = result.wall_time
    return record


def run_experiment(config: ExperimentConfig, progress=None) -> RunReport:
    """Stage 1: base load flow and candidate ranking. Stage 2: every algorithm x mode x seed."""
    network = load_case(config.case)
    options = SolverOptions(tolerance=config.tolerance, max_iterations=config.max_iterations)
    base = solve(network, options)
    if not base.converged:
        raise RuntimeError(f"base case did not converge (mismatch {base.max_mismatch:.3e})")
    ranking = rank_buses(network, base)
    candidates, computed, reference, notes = choose_candidates(config, network, ranking)

    runs: list[RunRecord] = []
    base_loss = None
    for mode in config.modes:
        problem = build_problem(config, network, candidates, mode)
        base_loss = problem.base_loss
        for algorithm in config.algorithms:
            for seed in config.seeds:
                record = _run_one(problem, config, algorithm, mode, seed)
                runs.append(record)
                if progress:
                    progress(record)

    p_demand, q_demand = network.total_demand()
    base_info = {
        "p_loss": base_loss if base_loss is not None else base.p_loss_total,
        "p_loss_branch_sum": base.p_loss_total,
        "q_loss": base.q_loss_total,
        "iterations": base.iterations,
        "max_mismatch": base.max_mismatch,
        "p_demand": p_demand,
        "q_demand": q_demand,
        "voltages": [float(v) for v in base.v],
        "angles_deg": [float(a) for a in base.delta_degrees],
        "branch_losses": base.branch_losses.tolist(),
    }
    return RunReport(
        config=config,
        network=network,
        base=base_info,
        ranking=[(int(r), int(b), float(x), float(n)) for r, b, x, n in ranking.rows()],
        candidates=list(candidates),
        computed_candidates=list(computed),
        reference_candidates=reference,
        notes=notes,
        runs=runs,
    )


def _pct(base: float, value: float | None) -> float | None:
    if value is None or base == 0:
        return None
    return 100.0 * (base - value) / base


def _tables(report: RunReport) -> dict[str, str]:
    net = report.network
    base = report.base
    labels = report.labels()
    best = {label: report.best(label) for label in labels}
    out = {}

    rows = [["base", "", "", "", base["p_loss"], base["q_loss"], 0.0, 0.0, 0.0, "", True, ""]]
    for r in report.runs:
        rows.append([
            r.label, r.algorithm, r.mode, r.seed, r.p_loss, r.q_loss,
            _pct(base["p_loss"], r.p_loss), _pct(base["q_loss"], r.q_loss),
            sum(r.sizes) if r.sizes else None, r.fitness, r.converged, r.error or "",
        ])
    out["losses.csv"] = write_results_csv(
        ["label", "algorithm", "mode", "seed", "p_loss_mw", "q_loss_mvar", "p_reduction_pct",
         "q_reduction_pct", "total_dg_mw", "fitness", "converged", "error"],
        rows,
    )

    rows = []
    for i, bus in enumerate(report.candidates):
        rows.append([bus] + [best[l].sizes[i] if best[l] else None for l in labels])
    out["dg_sizes.csv"] = write_results_csv(["bus"] + labels, rows)

    rows = []
    for i, bus in enumerate(net.bus_ids):
        rows.append([bus, base["voltages"][i]] + [best[l].voltages[i] if best[l] else None for l in labels])
    out["voltage_profile.csv"] = write_results_csv(["bus", "base"] + labels, rows)

    cols, series = [], []
    for r in report.runs:
        cols.append(f"{r.label}-seed{r.seed}")
        series.append(r.convergence)
    n_iter = max((len(s) for s in series), default=0)
    rows = [[t + 1] + [s[t] if t < len(s) else None for s in series] for t in range(n_iter)]
    out["convergence.csv"] = write_results_csv(["iteration"] + cols, rows)

    cols = ["branch", "from_bus", "to_bus", "base_p_mw", "base_q_mvar"]
    for l in labels:
        cols += [f"{l}_p_mw", f"{l}_q_mvar"]
    rows = []
    for j, br in enumerate(net.branches):
        row = [j + 1, br.from_bus, br.to_bus, *base["branch_losses"][j]]
        for l in labels:
            row += best[l].branch_losses[j] if best[l] and best[l].branch_losses else [None, None]
        rows.append(row)
    out["branch_losses.csv"] = write_results_csv(cols, rows)

    selected = set(report.candidates)
    rows = [[rank, bus, raw, norm, bus in selected] for rank, bus, raw, norm in report.ranking]
    out["lsf.csv"] = write_results_csv(["rank", "bus", "lsf", "normalized", "selected"], rows)

    out["summary.csv"] = write_results_csv(
        ["label", "runs", "failed", "best_seed", "best_p_loss_mw", "min_p_loss_mw", "median_p_loss_mw",
         "worst_p_loss_mw", "best_fitness", "median_fitness", "worst_fitness"],
        report.summary_rows(),
    )
    return out


def report_document(report: RunReport) -> dict[str, Any]:
    runs = []
    for r in report.runs:
        d = asdict(r)
        d.pop("wall_time")
        d.pop("convergence")
        d.pop("voltages")
        d.pop("branch_losses")
        runs.append(d)
    return {
        "format": "dgplan-run/1",
        # out_dir is where the file lives, not part of the experiment
        "config": {k: v for k, v in report.config.to_dict().items() if k != "out_dir"},
        "network": network_to_document(report.network),
        "base": report.base,
        "ranking": [list(row) for row in report.ranking],
        "candidates": report.candidates,
        "computed_candidates": report.computed_candidates,
        "reference_candidates": report.reference_candidates,
        "notes": report.notes,
        "runs": runs,
    }


def write_run_directory(report: RunReport, out_dir: str | Path) -> Path:
    """Write every output file; the directory is created if needed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in _tables(report).items():
        (out / name).write_text(text)
    (out / "report.json").write_text(json.dumps(report_document(report), indent=1, sort_keys=True) + "\n")
    timing = {f"{r.label}-seed{r.seed}": r.wall_time for r in report.runs}
    (out / "timing.json").write_text(json.dumps(timing, indent=1) + "\n")
    return out


@dataclass
class VerifyResult:
    ok: bool
    checked: int
    failures: list[str]


def _same_csv_number(text: str, value: float | None) -> bool:
    if value is None:
        return text == ""
    return text == f"{value:.6f}"


def verify_report(run_dir: str | Path) -> VerifyResult:
    """Re-evaluate every reported sizing and compare losses with what was written.

    The load flow is re-run from the network stored in report.json, so the
    check does not depend on the original case file still being around.
    """
    run_dir = Path(run_dir)
    doc = json.loads((run_dir / "report.json").read_text())
    runs = doc.get("runs") or []
    if not runs:
        return VerifyResult(True, 0, [])
    config = ExperimentConfig.from_dict(doc["config"])
    network = network_from_document(doc["network"])
    problems: dict[str, SizingProblem] = {}
    failures: list[str] = []
    checked = 0

    csv_rows = {}
    losses_path = run_dir / "losses.csv"
    if losses_path.exists():
        header, rows = read_results_csv(losses_path.read_text())
        idx = {name: i for i, name in enumerate(header)}
        for row in rows[1:]:
            csv_rows[(row[idx["label"]], row[idx["seed"]])] = row[idx["p_loss_mw"]]
    else:
        failures.append("losses.csv is missing")

    base_loss = None
    for run in runs:
        name = f"{run['label']} seed {run['seed']}"
        if run.get("sizes") is None:
            continue
        mode = run["mode"]
        if mode not in problems:
            problems[mode] = build_problem(config, network, doc["candidates"], mode)
            base_loss = problems[mode].base_loss
        ev = problems[mode].evaluate(run["sizes"])
        checked += 1
        recomputed = _clean(ev.p_loss)
        reported = run.get("p_loss")
        if (recomputed is None) != (reported is None) or (
            recomputed is not None and abs(recomputed - reported) > VERIFY_TOLERANCE
        ):
            failures.append(f"row {name}: reported p_loss {reported!r}, recomputed {recomputed!r}")
        if abs(ev.fitness - run["fitness"]) > VERIFY_TOLERANCE * max(1.0, abs(ev.fitness)):
            failures.append(f"row {name}: reported fitness {run['fitness']!r}, recomputed {ev.fitness!r}")
        key = (run["label"], str(run["seed"]))
        if csv_rows and (key not in csv_rows or not _same_csv_number(csv_rows[key], reported)):
            failures.append(f"row {name}: losses.csv p_loss {csv_rows.get(key)!r} does not match report.json")
    if base_loss is not None and abs(base_loss - doc["base"]["p_loss"]) > VERIFY_TOLERANCE:
        failures.append(f"row base: reported p_loss {doc['base']['p_loss']!r}, recomputed {base_loss!r}")
    return VerifyResult(not failures, checked, failures)


def load_summary(run_dir: str | Path) -> dict[str, Any]:
    doc = json.loads((Path(run_dir) / "report.json").read_text())
    header, rows = read_results_csv((Path(run_dir) / "summary.csv").read_text())
    return {"document": doc, "summary_header": header, "summary_rows": rows}
