"""Collects acceptance outcomes and prints one line per criterion after the run."""

import pytest

_RESULTS: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, title): exit criterion of the build")


@pytest.fixture
def note(request):
    """Attach a short measurement to the acceptance line, e.g. ``note("1.2 s")``."""
    def add(text):
        request.node.user_properties.append(("note", text))
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    cid, title = mark.args
    entry = _RESULTS.setdefault(cid, {"title": title, "ok": True, "ran": False, "notes": []})
    if report.when == "call":
        entry["ran"] = True
        entry["notes"] = [v for k, v in item.user_properties if k == "note"]
    if report.failed:
        entry["ok"] = False
    flagged = [v for k, v in item.user_properties if k == "flag"]
    if flagged:
        entry["flag"] = flagged[-1]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: int(c[2:])):
        e = _RESULTS[cid]
        if not e["ran"] and e["ok"]:
            status = "SKIP"
        elif not e["ok"]:
            status = "FAIL"
        elif e.get("flag"):
            status = "FLAGGED"
        else:
            status = "PASS"
        detail = "; ".join(e["notes"] + ([e["flag"]] if e.get("flag") else []))
        terminalreporter.write_line(f"{cid} {status:7s} {e['title']}" + (f"  [{detail}]" if detail else ""))
