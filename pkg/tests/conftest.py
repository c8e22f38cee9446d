import copy
import json
from importlib import resources

import pytest

from eaco_sim.profiles import default_db, parse_profiles

MODELS = ["AlexNet", "ResNet-18", "ResNet-50", "VGG-16"]


@pytest.fixture(scope="session")
def db():
    return default_db()


@pytest.fixture
def profile_doc():
    text = resources.files("eaco_sim").joinpath("data/default_profiles.json").read_text()
    return json.loads(text)


def multi_count_db(counts=(1, 2, 4, 8)):
    """Default profiles duplicated for several GPU counts (test fixture only)."""
    doc = json.loads(resources.files("eaco_sim").joinpath("data/default_profiles.json").read_text())
    extra = []
    for rec in doc["exclusive"]:
        for n in counts:
            if n != rec["gpu_count"]:
                r = copy.deepcopy(rec)
                r["gpu_count"] = n
                extra.append(r)
    doc["exclusive"] += extra
    return parse_profiles(doc, "multi-count fixture")


# --------------------------------------------------------------------------- acceptance report

_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, [title, True, []])
    entry[1] = entry[1] and rep.passed
    if rep.when == "call":
        entry[2].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[n]
        extra = f" ({'; '.join(details)})" if details else ""
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {title}{extra}")
