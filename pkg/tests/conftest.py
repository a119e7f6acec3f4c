from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dgplan import harness  # noqa: E402
from dgplan.caseio import load_builtin  # noqa: E402

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture(scope="session")
def ieee14():
    return load_builtin("ieee14")


@pytest.fixture(scope="session")
def ieee30():
    return load_builtin("ieee30")


class RecordingProblem:
    """Delegates to a SizingProblem and remembers every position it is asked to score."""

    def __init__(self, problem):
        self._problem = problem
        self.lower = problem.lower
        self.upper = problem.upper
        self.calls = 0
        self.out_of_bounds = 0

    def __getattr__(self, name):
        return getattr(self._problem, name)

    def __call__(self, x):
        self.calls += 1
        if np.any(x < self.lower) or np.any(x > self.upper):
            self.out_of_bounds += 1
        return self._problem(x)

    def evaluate(self, x):
        return self._problem.evaluate(x)


@pytest.fixture(scope="session")
def full_studies(tmp_path_factory):
    """Both systems, both algorithms, both modes, seeds 0-9, reference candidates.

    This is the expensive part of the suite (80 optimizer runs); every test that
    needs stochastic results shares it.
    """
    recorders: list[RecordingProblem] = []
    original = harness.build_problem

    def recording_build(*args, **kwargs):
        rec = RecordingProblem(original(*args, **kwargs))
        recorders.append(rec)
        return rec

    studies = {}
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(harness, "build_problem", recording_build)
        for case in ("ieee14", "ieee30"):
            config = harness.ExperimentConfig(case=case, pin_reference_candidates=True)
            report = harness.run_experiment(config)
            run_dir = harness.write_run_directory(report, tmp_path_factory.mktemp(f"study-{case}"))
            studies[case] = (report, run_dir)
    studies["recorders"] = recorders
    return studies
