import numpy as np
import pytest

from doml.core import CompoundInstance, HyperParams


def make_inst(task, x, y=1):
    return CompoundInstance(task, np.asarray(x, dtype=np.float64), y)


def random_buffer(rng: np.random.Generator, k: int, d: int, m: int) -> list[CompoundInstance]:
    tasks = rng.integers(0, k, size=m)
    xs = rng.normal(size=(m, d))
    ys = rng.choice([-1, 1], size=m)
    return [CompoundInstance(int(t), x, int(y)) for t, x, y in zip(tasks, xs, ys)]


@pytest.fixture
def hp():
    return HyperParams()


@pytest.fixture
def nprng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def report(label: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
