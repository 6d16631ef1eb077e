import json

import pytest

from agp.dataset import (
    BaselineRanking,
    DatasetBundle,
    InteractionRecord,
    SyntheticWorldSpec,
    UserRecord,
    generate_synthetic_world,
    sample_split,
)
from agp.gateway import Gateway
from agp.mock import MockBackend


def rec(item_id, title, ts):
    return InteractionRecord(item_id, title, ts)


@pytest.fixture
def three_users():
    users = {
        "u1": UserRecord(
            "u1",
            (rec("a", "Saga of Ember [fantasy]", 1), rec("b", "Dark Alley [noir]", 2)),
            "c",
            ("d",),
        ),
        "u2": UserRecord("u2", (rec("e", "Red Planet [scifi]", 5),), "f", ("g",)),
        "u3": UserRecord("u3", (rec("h", "Old Letters [romance]", 7),), "i", ("j",)),
    }
    rankings = {
        "u1": BaselineRanking("u1", "lightgcn", (("x", "Noir Night [noir]"), ("d", "Dragon Crown [fantasy]"))),
        "u2": BaselineRanking("u2", "lightgcn", (("g", "Moon Base [scifi]"), ("y", "Love Song [romance]"))),
        "u3": BaselineRanking("u3", "lightgcn", (("z", "Ghost House [horror]"), ("j", "Paris Kiss [romance]"))),
    }
    return DatasetBundle(users, rankings)


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def mock_gateway():
    return Gateway(MockBackend())


@pytest.fixture(scope="session")
def small_world():
    spec = SyntheticWorldSpec(seed=1, n_users=70)
    return sample_split(generate_synthetic_world(spec), 20, 50, seed=1)


# one pass/fail line per acceptance criterion at the end of the run
_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_criterion_", 1)[1].split("[", 1)[0]
    num = int(name.split("_", 1)[0])
    failed = report.failed
    if report.when == "call" or failed:
        prev = _CRITERIA.get(num, ("PASS", name))[0]
        _CRITERIA[num] = ("FAIL" if failed or prev == "FAIL" else "PASS", name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, name = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num}: {status}  {name}")
