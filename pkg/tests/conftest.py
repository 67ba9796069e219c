import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1].split("[")[0]
        status = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {status} {name}")
