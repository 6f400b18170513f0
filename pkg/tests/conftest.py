import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from robustbias.fileio import bundled, read_rob_json, read_study_csv  # noqa: E402
from robustbias.model import Hyperparameters  # noqa: E402

# considerations across all domains: q1 <= q2, q3 = q4 <= q2, 0.1 <= q2 <= 0.95
ALL_DOMAIN_CONSTRAINTS = [
    {"studies": ["REFLEX"], "lower": 0.1, "upper_block": 1},
    {"studies": ["WA16291"], "lower": 0.1, "upper": 0.95},
    {"studies": ["DANCER", "SERENE"], "lower": 0.1, "upper_block": 1},
]


@pytest.fixture(scope="session")
def data():
    return read_study_csv(bundled("rituximab.csv"))


@pytest.fixture(scope="session")
def rob(data):
    return read_rob_json(bundled("rituximab_rob.json"), data)


@pytest.fixture(scope="session")
def hyper():
    return Hyperparameters()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(module.RESULTS, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = module.RESULTS[key]
        status = "NOT RUN" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"[{status}] criterion {key}: {detail}")
