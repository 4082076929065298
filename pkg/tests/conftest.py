import numpy as np
import pytest

from hedonic import fixture
from hedonic.dataset import FactorSpec, build_dataset, ingest_csv


@pytest.fixture(scope="session")
def fixture_paths():
    return fixture.bundled_paths()


@pytest.fixture(scope="session")
def fixture_ingest(fixture_paths):
    return ingest_csv(fixture_paths[0])


@pytest.fixture(scope="session")
def fixture_dataset(fixture_ingest):
    return build_dataset(fixture_ingest.records, FactorSpec(include_distance=False))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
