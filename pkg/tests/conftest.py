import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion id -> (title, outcome); filled by tests in test_acceptance.py
ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for key, value in report.user_properties:
        if key == "criterion":
            cid, title = value
            prev = ACCEPTANCE.get(cid, (title, "PASS"))[1]
            outcome = "PASS" if report.passed and prev == "PASS" else "FAIL"
            ACCEPTANCE[cid] = (title, outcome)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        title, outcome = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{outcome} criterion {cid}: {title}")
