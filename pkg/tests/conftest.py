import datetime as dt

import numpy as np
import pytest

from feederlab.datagen import GeneratorConfig, generate_dataset
from feederlab.domain import TimeGrid
from feederlab.prep import clean_dataset


def make_grid(days: int, start=dt.datetime(2024, 1, 1)) -> TimeGrid:
    return TimeGrid(start, 96 * days)


@pytest.fixture(scope="session")
def small_config() -> GeneratorConfig:
    return GeneratorConfig(seed=11, n_feeders=12, start=dt.date(2023, 1, 2), end=dt.date(2023, 1, 22))


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return generate_dataset(small_config)


@pytest.fixture(scope="session")
def clean_small(small_dataset):
    return clean_dataset(small_dataset)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_dataset():
    """The default desk-scale dataset (200 feeders x 120 days)."""
    return generate_dataset(GeneratorConfig())


# --- acceptance reporting ----------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


class _Criterion:
    def __init__(self, lines, number, title):
        self.lines, self.number, self.title = lines, number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        note = self.detail if exc_type is None else f"{self.detail} {exc}".strip()
        line = f"criterion {self.number:>2} {status}  {self.title}" + (f": {note}" if note else "")
        self.lines.append(line)
        print(line)
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(3, "title") as c:`` records one pass/fail line."""
    lines = request.config.stash[_ACCEPTANCE]
    return lambda number, title: _Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
