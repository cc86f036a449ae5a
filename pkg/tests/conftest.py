import time

import pytest

from hamshape.config import from_preset
from hamshape.geometry import FiniteElementSpace, build_rectangle_mesh

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def space48():
    return FiniteElementSpace(build_rectangle_mesh((-3, 3, -3, 3), 48), 2)


@pytest.fixture(scope="session")
def space96():
    return FiniteElementSpace(build_rectangle_mesh((-3, 3, -3, 3), 96), 2)


def _run_preset(name, tmp_path_factory):
    from hamshape.optimizer import optimize
    from hamshape.output import RunWriter

    cfg = from_preset(name)
    space = cfg.build_space()
    problem = cfg.problem(space)
    out = tmp_path_factory.mktemp(name)
    start = time.perf_counter()
    writer = RunWriter(out, cfg, space, problem)
    history = optimize(problem, cfg.g0, cfg.u0, callback=writer)
    writer.finish(history)
    return {"history": history, "dir": out, "problem": problem, "config": cfg,
            "seconds": time.perf_counter() - start}


@pytest.fixture(scope="session")
def example1_run(tmp_path_factory):
    return _run_preset("example1", tmp_path_factory)


@pytest.fixture(scope="session")
def example2_run(tmp_path_factory):
    return _run_preset("example2", tmp_path_factory)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, passed, detail):
        _ACCEPTANCE.append((number, bool(passed), detail))
        print(f"ACCEPTANCE #{number}: {'PASS' if passed else 'FAIL'} - {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"ACCEPTANCE #{number}: {'PASS' if passed else 'FAIL'} - {detail}")
