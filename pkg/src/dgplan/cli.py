"""Command line entry point: ``dgplan solve|lsf|optimize|report|verify``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .caseio import BUILTIN_CASES, CaseParseError, CaseSchemaError, load_case, read_results_csv, write_results_csv
from .harness import ConfigError, ExperimentConfig, run_experiment, verify_report, write_run_directory
from .network import NetworkError
from .powerflow import PowerFlowError, SolverOptions, solve
from .sensitivity import SensitivityError, rank_buses, select_candidates

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _load(case: str):
    if case not in BUILTIN_CASES and not Path(case).exists():
        raise UsageError(f"case {case!r} is neither a built-in ({', '.join(BUILTIN_CASES)}) nor an existing file")
    return load_case(case)


def cmd_solve(args) -> int:
    net = _load(args.case)
    sol = solve(net, SolverOptions(tolerance=args.tol, max_iterations=args.max_iter))
    rows = [
        [bus, kind, v, a, p * net.base_mva, q * net.base_mva]
        for bus, kind, v, a, p, q in zip(
            net.bus_ids, [b.kind.value for b in net.buses], sol.v, sol.delta_degrees, sol.p_injected, sol.q_injected
        )
    ]
    sys.stdout.write(write_results_csv(["bus", "type", "v_pu", "angle_deg", "p_mw", "q_mvar"], rows))
    status = "converged" if sol.converged else "NOT converged"
    print(
        f"# {status} in {sol.iterations} iterations, max mismatch {sol.max_mismatch:.3e} pu; "
        f"losses {sol.p_loss_total:.4f} MW / {sol.q_loss_total:.4f} MVAr",
        file=sys.stderr,
    )
    return EXIT_OK if sol.converged else EXIT_FAILURE


def cmd_lsf(args) -> int:
    net = _load(args.case)
    sol = solve(net)
    if not sol.converged:
        print("base case load flow did not converge", file=sys.stderr)
        return EXIT_FAILURE
    ranking = rank_buses(net, sol)
    k = args.k or BUILTIN_CASES.get(args.case, {}).get("k", 4)
    chosen = set(select_candidates(ranking, k))
    rows = [[rank, bus, raw, norm, bus in chosen] for rank, bus, raw, norm in ranking.rows()]
    sys.stdout.write(write_results_csv(["rank", "bus", "lsf", "normalized", "selected"], rows))
    ref = BUILTIN_CASES.get(args.case, {}).get("reference_candidates")
    if ref is not None and set(ref) != chosen:
        print(f"# selected {sorted(chosen)} differ from reference candidates {sorted(ref)}", file=sys.stderr)
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.config and not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    data["case"] = args.case
    if args.algo is not None:
        data["algorithms"] = args.algo
    if args.mode is not None:
        data["modes"] = args.mode
    if args.seeds is not None:
        data["seeds"] = args.seeds
    if args.k is not None:
        data["k"] = args.k
    if args.candidates is not None:
        data["candidates"] = args.candidates
    if args.pin_reference_candidates:
        data["pin_reference_candidates"] = True
    if args.voltage_policy is not None:
        data["voltage_policy"] = args.voltage_policy
    for name in ("population", "iterations"):
        value = getattr(args, name)
        if value is not None:
            key = "population" if name == "population" else "max_iterations"
            for algo in ("pso", "woa"):
                data.setdefault(algo, {})[key] = value
    config = ExperimentConfig.from_dict(data)
    if args.out:
        config.out_dir = args.out
    return config


def cmd_optimize(args) -> int:
    try:
        config = _experiment_config(args)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file is not valid JSON: {err}") from None
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {err.filename}") from None
    _load(config.case)
    out = Path(args.out) if args.out else config.output_dir()

    def progress(record):
        if record.ok:
            print(f"{record.label} seed {record.seed}: p_loss {record.p_loss:.4f} MW, fitness {record.fitness:.4f}", file=sys.stderr)
        else:
            print(f"{record.label} seed {record.seed}: FAILED {record.error}", file=sys.stderr)

    report = run_experiment(config, progress=None if args.quiet else progress)
    for note in report.notes:
        print(f"# {note}", file=sys.stderr)
    write_run_directory(report, out)
    print(str(out))
    failed = [r for r in report.runs if not r.ok]
    return EXIT_FAILURE if len(failed) == len(report.runs) else EXIT_OK


def _require_run_dir(path: str) -> Path:
    run_dir = Path(path)
    if not (run_dir / "report.json").is_file():
        raise UsageError(f"{path} is not a run directory (no report.json)")
    return run_dir


def cmd_report(args) -> int:
    run_dir = _require_run_dir(args.run_dir)
    doc = json.loads((run_dir / "report.json").read_text())
    base = doc["base"]
    print(f"case {doc['config']['case']}: base loss {base['p_loss']:.4f} MW / {base['q_loss']:.4f} MVAr")
    print(f"candidates {doc['candidates']} (ranking picked {doc['computed_candidates']})")
    for note in doc["notes"]:
        print(f"note: {note}")
    header, rows = read_results_csv((run_dir / "summary.csv").read_text())
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return EXIT_OK


def cmd_verify(args) -> int:
    run_dir = _require_run_dir(args.run_dir)
    result = verify_report(run_dir)
    for failure in result.failures:
        print(f"FAIL {failure}")
    print(f"{'PASS' if result.ok else 'FAIL'}: {result.checked} reported sizings re-evaluated")
    return EXIT_OK if result.ok else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgplan", description="DG placement and sizing on transmission test systems")
    parser.add_argument("--version", action="version", version=f"dgplan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="Newton-Raphson load flow; prints the bus table as CSV")
    p.add_argument("case", help="built-in name (ieee14, ieee30) or path to a .m / .json case")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=50)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("lsf", help="loss sensitivity ranking of the non-slack buses")
    p.add_argument("case")
    p.add_argument("--k", type=int, help="number of candidate buses to mark")
    p.set_defaults(func=cmd_lsf)

    p = sub.add_parser("optimize", help="size DG units with PSO and/or WOA")
    p.add_argument("case")
    p.add_argument("--algo", choices=["pso", "woa", "both"])
    p.add_argument("--mode", choices=["technical", "techno-economic", "both"])
    p.add_argument("--seeds", type=_int_list, help="comma separated seeds (default 0..9)")
    p.add_argument("--k", type=int)
    p.add_argument("--candidates", type=_int_list, help="comma separated bus ids to use instead of the ranking")
    p.add_argument("--pin-reference-candidates", action="store_true",
                   help="use the reference candidate buses of a built-in case")
    p.add_argument("--voltage-policy", choices=["no-worse-high", "no-worse", "strict"])
    p.add_argument("--population", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--out", help="run directory (overrides DGPLAN_OUT and the config)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", help="print the summary of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="re-evaluate every reported sizing in a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as err:
        print(f"dgplan: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseParseError, CaseSchemaError, NetworkError, PowerFlowError, SensitivityError, RuntimeError, ValueError, OSError) as err:
        print(f"dgplan: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
