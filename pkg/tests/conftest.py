import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddflow.fem import Assembler, FlowParams
from ddflow.mesh import build_channel_mesh

settings.register_profile("ddflow", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ddflow")


@pytest.fixture(scope="session")
def mesh_20x4x4():
    return build_channel_mesh(20, 4, 4)


@pytest.fixture(scope="session")
def assembler_20x4x4(mesh_20x4x4):
    return Assembler(mesh_20x4x4)


@pytest.fixture(scope="session")
def first_system_20x4x4(mesh_20x4x4, assembler_20x4x4):
    """Dirichlet-imposed ``(F, J)`` at the plug-flow guess, Re=100, lam=1e7."""
    from ddflow.schwarz import initial_guess
    return assembler_20x4x4.assemble(initial_guess(mesh_20x4x4), FlowParams(100.0, 1e7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
