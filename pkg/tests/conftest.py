import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from imitatio.kernel import k_identity, k_periodic, k_unique, parse_kernel_spec  # noqa: E402

KERNELS = Path(__file__).resolve().parent.parent / "kernels"


class FixedSource:
    """Stand-in for RandomSource with scripted decrements and uniforms."""

    def __init__(self, decrements, uniforms=None, default_k=1):
        self.decrements = dict(decrements)
        self.uniforms = dict(uniforms or {})
        self.default_k = default_k
        self.seed = 0
        self.substream = 0

    def decrement(self, site):
        return self.decrements.get(site, self.default_k)

    def uniform(self, tag, site):
        return self.uniforms.get((tag, site), 0.5)


@pytest.fixture
def kunique():
    return k_unique()


@pytest.fixture
def kperiodic():
    return k_periodic()


@pytest.fixture
def kidentity():
    return k_identity()


def load_kernel(name):
    return parse_kernel_spec((KERNELS / f"{name}.json").read_text())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
