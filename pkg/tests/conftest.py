import csv
from pathlib import Path

import pytest

from deployscore import store
from deployscore.irt import fit

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def table1_matrix():
    return store.load_responses(DATA / "table1_responses.csv")


@pytest.fixture(scope="session")
def table1_model(table1_matrix):
    return fit(table1_matrix)


@pytest.fixture(scope="session")
def table1_expected() -> list[dict]:
    """Published ability, total score and ADS per deployment, in file order."""
    with open(FIXTURES / "table1_expected.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {
            "deployment_id": r["deployment_id"],
            "theta": float(r["theta"]),
            "total_score": int(r["total_score"]),
            "ads": float(r["ads"]),
        }
        for r in rows
    ]


@pytest.fixture(scope="session")
def worked_mesh():
    return store.load_mesh(DATA / "mesh_worked_example.json")


# ---------------------------------------------------------------------------
# acceptance verdicts: one PASS/FAIL line per criterion in the terminal summary
# ---------------------------------------------------------------------------

_VERDICTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.failed:
        _VERDICTS[number] = (title, "FAIL")
    elif report.when == "call" and number not in _VERDICTS:
        _VERDICTS[number] = (title, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, verdict = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")
