import logging

import pytest

from tbw.ingest import RawEvent, Role, clean_and_index
from tbw.tssn import SECONDS_PER_DAY, build_tssn

DAY = SECONDS_PER_DAY


@pytest.fixture(autouse=True)
def _quiet_eval_warnings():
    logging.getLogger("tbw").setLevel(logging.ERROR)
    yield


@pytest.fixture
def two_snapshot():
    """A-B on day 0, B-C on day 35 with 30-day snapshots."""
    events = [RawEvent("A", "B", 0), RawEvent("B", "C", 35 * DAY)]
    roles = {"A": Role.USER, "B": Role.DEVELOPER, "C": Role.USER}
    edges, table = clean_and_index(events, roles)
    return edges, table, build_tssn(edges, table)


# one summary line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        status, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
