import pytest

_criteria: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        name = marker.args[0]
        detail = dict(item.user_properties).get("detail", "")
        if report.failed and not detail:
            detail = str(report.longrepr).strip().splitlines()[-1][:160]
        _criteria[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, (verdict, detail) in _criteria.items():
        terminalreporter.write_line(f"{verdict} {name}" + (f" | {detail}" if detail else ""))
