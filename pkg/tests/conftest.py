import numpy as np
import pytest
from hypothesis import settings

from cooptune.config import DEFAULTS, build_sim_config, merge_config
from cooptune.control import Gains
from cooptune.rigidmotion import KinematicParams, UnitQuaternion
from cooptune.sim import run

# compiled kernels make first calls slow; timing is checked explicitly where it matters
settings.register_profile("cooptune", deadline=None)
settings.load_profile("cooptune")

THETA_TRUE = KinematicParams([0.1, -0.2, 0.3], UnitQuaternion.from_axis_angle([1.0, 2.0, 3.0], np.pi / 6))


def true_params_section() -> dict:
    return dict(DEFAULTS["theta_true"])


def scenario(**sections) -> dict:
    """Default config with the given sections merged over it."""
    return merge_config(sections)


@pytest.fixture(scope="session")
def default_sim():
    return build_sim_config(scenario())


@pytest.fixture(scope="session")
def model(default_sim):
    return default_sim.model


@pytest.fixture(scope="session")
def gains():
    return Gains.diagonal(25.0, 10.0)


@pytest.fixture(scope="session")
def theta_true():
    return THETA_TRUE


@pytest.fixture(scope="session")
def warm_jit():
    """Run a few steps so compiled kernels are loaded before anything is timed."""
    run(build_sim_config(scenario(trajectory={"duration": 0.01})))
    run(build_sim_config(scenario(trajectory={"duration": 0.01}), adaptation=False))
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed as one line per criterion at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_COUNT = 10


def verdict(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    assert ok, f"criterion {number}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        else:
            terminalreporter.write_line(f"criterion {n}: FAIL (not evaluated)")
