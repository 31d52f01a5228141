import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one verdict line per acceptance criterion and fail the test on FAIL."""
    lines = request.config.acceptance_lines

    def verdict(number, name, passed, detail):
        line = f"criterion {number:>2} {name}: {'PASS' if passed else 'FAIL'} | {detail}"
        print(line)
        lines.append(line)
        assert passed, line

    return verdict


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
