import pytest

from twostate.coefficients import make_baseline
from twostate.geometry import Domain, build_grid


@pytest.fixture
def grid1d():
    return build_grid(Domain((0.0,), (1.0,), 0.5), 41)


@pytest.fixture
def grid2d():
    return build_grid(Domain((0.0, 0.0), (1.0, 1.0), 0.5), 21)


@pytest.fixture
def baseline1d(grid1d):
    return make_baseline(grid1d, 4.0, A0=0.5, p0=0.5, qplus0=1.0, qminus0=-0.5, variation=0.3, seed=1)


@pytest.fixture
def baseline2d(grid2d):
    return make_baseline(grid2d, 4.0, A0=0.5, p0=0.5, qplus0=1.0, qminus0=-0.5, variation=0.3, seed=1)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion: int, ok: bool, detail: str) -> bool:
        lines.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
