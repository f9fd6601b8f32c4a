import time
from pathlib import Path

import pytest

from tightdual import load_problem
from tightdual.certify import certify
from tightdual.fosolve import SolveConfig, solve_atd

DATA = Path(__file__).parent / "data"

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def case_path(name: str) -> Path:
    if name == "two_bus":
        return DATA / "two_bus.m"
    return DATA / f"pglib_opf_{name}.m"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def problems():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_problem(case_path(name))
        return cache[name]

    return get


class Solved:
    def __init__(self, problem, report, bound, elapsed):
        self.problem = problem
        self.report = report
        self.bound = bound
        self.elapsed = elapsed


def _solve(problem, **kw):
    t0 = time.perf_counter()
    rep = solve_atd(problem, SolveConfig(**kw))
    bound = certify(rep.point, problem)
    return Solved(problem, rep, bound, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def solved_case3(problems):
    return _solve(problems("case3_lmbd"), max_iter=20000)


@pytest.fixture(scope="session")
def solved_case14(problems):
    return _solve(problems("case14_ieee"), max_iter=30000)


@pytest.fixture(scope="session")
def solved_two_bus(problems):
    return _solve(problems("two_bus"), max_iter=20000)


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary is printed at the end of the run."""

    def record(cid: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE[cid] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_ACCEPTANCE, key=lambda c: [int(p) if p.isdigit() else p for p in c.replace(".", " ").split()]):
        ok, detail = _ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {cid}: {detail}")
