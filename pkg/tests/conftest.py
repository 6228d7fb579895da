from __future__ import annotations

import numpy as np
import pytest

from gaugment.augment_ops import FeatureBatch, FeatureMatrix


def random_batch(rng: np.random.Generator, size: int | None = None, dtype=np.float32) -> FeatureBatch:
    """Small padded batch with random lengths; padding is zero."""
    size = size or int(rng.integers(1, 5))
    channels = int(rng.integers(3, 24))
    frames = int(rng.integers(4, 60))
    items = []
    for _ in range(size):
        valid = int(rng.integers(1, frames + 1))
        x = rng.normal(0.0, 1.0, (valid, channels)).astype(dtype)
        items.append(FeatureMatrix.from_valid(x, frames))
    return FeatureBatch(tuple(items))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# -- acceptance report -- #

ACCEPTANCE = pytest.StashKey[dict]()
_PASSED = pytest.StashKey[bool]()


class Criterion:
    """One acceptance criterion: a title, a status, and measured numbers."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.status = "FAIL"
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def line(self) -> str:
        tail = f" [{'; '.join(self.notes)}]" if self.notes else ""
        return f"criterion {self.number:>2} {self.status}: {self.title}{tail}"


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """``criterion(number, title)`` registers the running test as that criterion."""
    mine: list[Criterion] = []

    def register(number: int, title: str) -> Criterion:
        entry = Criterion(number, title)
        request.config.stash[ACCEPTANCE][number] = entry
        mine.append(entry)
        return entry

    yield register
    passed = request.node.stash.get(_PASSED, False)
    for entry in mine:
        entry.status = "PASS" if passed else "FAIL"
        print(entry.line())


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    if report.when == "call":
        item.stash[_PASSED] = report.passed
    return report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number].line())
