import pytest

from hodgelab.calculus import build_dec
from hodgelab.complex import make_flat_torus, make_icosphere
from hodgelab.spectral import eigensolve
from hodgelab.verify import SuiteConfig, make_context


@pytest.fixture(scope="session")
def sphere2():
    return make_icosphere(2)


@pytest.fixture(scope="session")
def sphere3():
    return make_icosphere(3)


@pytest.fixture(scope="session")
def torus8():
    return make_flat_torus(8, 8)


@pytest.fixture(scope="session")
def torus16():
    return make_flat_torus(16, 16)


@pytest.fixture(scope="session")
def ops2(sphere2):
    return build_dec(sphere2)


@pytest.fixture(scope="session")
def spec2(ops2):
    return eigensolve(ops2, 0), eigensolve(ops2, 1)


@pytest.fixture(scope="session")
def ctx3(sphere3):
    return make_context(sphere3, SuiteConfig())


@pytest.fixture(scope="session")
def ctx2(sphere2):
    return make_context(sphere2, SuiteConfig())


@pytest.fixture(scope="session")
def ctx_torus(torus16):
    return make_context(torus16, SuiteConfig())


def pytest_terminal_summary(terminalreporter):
    from acceptance_lines import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(LINES):
            terminalreporter.write_line(LINES[key])
