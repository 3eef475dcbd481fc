import os
import sys

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for c in range(1, 8):
        if c in mod.RESULTS:
            ok, detail = mod.RESULTS[c]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {c}: {detail}")
        else:
            terminalreporter.write_line(f"NOT RUN criterion {c}")
