import re
import sys
import os

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_ACCEPTANCE: dict[str, dict[str, int]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if "test_acceptance" not in item.nodeid:
        return
    match = re.search(r"test_(criterion_\d+[a-z0-9_]*)", item.nodeid)
    if not match:
        return
    key = match.group(1)
    bucket = _ACCEPTANCE.setdefault(key, {"passed": 0, "failed": 0, "skipped": 0})
    if rep.when == "call":
        if rep.outcome == "passed":
            bucket["passed"] += 1
        elif rep.outcome == "failed":
            bucket["failed"] += 1
        else:
            bucket["skipped"] += 1
    elif rep.when == "setup" and rep.outcome in ("skipped", "failed"):
        bucket["skipped" if rep.outcome == "skipped" else "failed"] += 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        counts = _ACCEPTANCE[key]
        if counts["failed"]:
            verdict = "FAIL"
        elif counts["skipped"] and not counts["passed"]:
            verdict = "SKIP"
        elif counts["skipped"]:
            verdict = "PASS (partial skip)"
        else:
            verdict = "PASS"
        detail = f"{counts['passed']} passed"
        if counts["failed"]:
            detail += f", {counts['failed']} failed"
        if counts["skipped"]:
            detail += f", {counts['skipped']} skipped"
        terminalreporter.write_line(f"{verdict:>18}  {key}  ({detail})")
