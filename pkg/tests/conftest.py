import numpy as np
import pytest

from abakaliki.disease_model import ModelStructure
from abakaliki.population import load_data


@pytest.fixture(scope="session")
def data():
    return load_data()


@pytest.fixture(scope="session")
def structure(data):
    return ModelStructure.from_data(data)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
