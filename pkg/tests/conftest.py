import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gradtoy import toy_catalog  # noqa: E402
from recbench.graph import build_graph  # noqa: E402
from recbench.ingest import generate_synthetic, sessions_to_events  # noqa: E402
from recbench.preprocess import run_pipeline  # noqa: E402


@pytest.fixture(scope="session")
def small_data():
    """40 items in 4 planted blocks, 300 sessions, already preprocessed."""
    items, sessions = generate_synthetic(40, 300, 4, 0.1, 3)
    return run_pipeline(sessions_to_events(sessions), items)


@pytest.fixture(scope="session")
def small_graph(small_data):
    return build_graph(small_data.train_view().sessions, small_data.item_category)


@pytest.fixture(scope="session")
def two_block_data():
    """Planted 2-block set used by the training-behaviour tests."""
    items, sessions = generate_synthetic(20, 400, 2, 0.1, 5)
    return run_pipeline(sessions_to_events(sessions), items)


@pytest.fixture(scope="session")
def toy():
    return toy_catalog()


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
