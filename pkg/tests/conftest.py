import pytest

from redostore import Engine, EngineConfig, VirtualDisk


def manual_config(**kw) -> EngineConfig:
    """Commits are processed by the calling thread; no background threads."""
    kw.setdefault("checkpoint_interval", 0)
    return EngineConfig(threaded=False, **kw)


@pytest.fixture
def engine():
    eng = Engine(VirtualDisk(), manual_config())
    yield eng
    if not eng.closed:
        eng.closed = True
        eng._stop_threads()


@pytest.fixture
def threaded_engine():
    eng = Engine(VirtualDisk(), EngineConfig(checkpoint_interval=0))
    yield eng
    if not eng.closed:
        eng.closed = True
        eng._stop_threads()


# -- acceptance summary ----------------------------------------------------

CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when == "teardown" and report.passed:
        return
    number, title = mark.args
    entry = CRITERIA.setdefault(number, {"title": title, "ok": True, "failed": []})
    if report.failed:
        entry["ok"] = False
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        entry = CRITERIA[number]
        verdict = "PASS" if entry["ok"] else "FAIL"
        line = f"criterion {number}: {verdict}  {entry['title']}"
        if entry["failed"]:
            line += f"  (failed: {', '.join(entry['failed'])})"
        terminalreporter.write_line(line)
