import numpy as np
import pytest

from splicetail.estimate import fit_splice
from splicetail.panel import LinkConfig
from splicetail.simulate import DgpSpec, generate, replicate_rng


@pytest.fixture(scope="session")
def dgp1_small():
    """DGP I panel with n = 2000."""
    return generate(DgpSpec.dgp(1, T=50, I=40), replicate_rng(123, 0))


@pytest.fixture(scope="session")
def dgp1_full():
    """DGP I panel at the default size (n = 10000)."""
    return generate(DgpSpec.dgp(1), replicate_rng(2024, 0))


@pytest.fixture(scope="session")
def mle_full(dgp1_full):
    return fit_splice(dgp1_full, LinkConfig.full(1))


def pytest_configure(config):
    np.seterr(all="warn", under="ignore")


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
