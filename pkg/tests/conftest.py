from types import SimpleNamespace

import numpy as np
import pytest

from nelsonsim.config import ExperimentConfig, FieldSection, ModelSection
from nelsonsim.operators import GridSpec, build_model, ground_state, h_transform
from nelsonsim.particle_paths import BROWNIAN
from nelsonsim.pphi1 import JumpTable, StationaryLaw

# lines printed by the acceptance module, shown in the terminal summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def _chain(model):
    gs = ground_state(model.H)
    L = h_transform(model.H, gs)
    law = StationaryLaw.from_ground_state(gs)
    return SimpleNamespace(model=model, gs=gs, L=L, law=law, table=JumpTable.from_generator(L),
                           x=model.X, xi=model.field_functional(1.0))


@pytest.fixture(scope="session")
def classical():
    """Default configuration: oscillator plus one field quadrature, g = 0.5."""
    return _chain(ExperimentConfig().build())


@pytest.fixture(scope="session")
def relativistic():
    cfg = ExperimentConfig(model=ModelSection("relativistic", 1.0))
    return _chain(cfg.build())


@pytest.fixture(scope="session")
def weak():
    cfg = ExperimentConfig(field=FieldSection(g=0.2))
    return _chain(cfg.build())


@pytest.fixture(scope="session")
def oscillator():
    """Harmonic oscillator with no field on the default particle grid."""
    return _chain(build_model(GridSpec(), BROWNIAN, None))


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)
