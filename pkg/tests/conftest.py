"""Collects the acceptance-criterion outcomes and prints one line per criterion."""

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        _ACCEPTANCE[props["criterion"]] = (report.passed, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda s: (int(s.split()[0]), s)):
        ok, detail = _ACCEPTANCE[name]
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}" +
                      (f"  [{detail}]" if detail else ""))
