import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import helpers  # noqa: E402
from eqkit import solver  # noqa: E402


@pytest.fixture(scope="session")
def solovev_params():
    return helpers.solovev_case()


@pytest.fixture(scope="session")
def solovev_map(solovev_params):
    return solver.solovev_psimap(solovev_params, nr=257, nz=257)


@pytest.fixture(scope="session")
def shot_dir(tmp_path_factory):
    """Full analytic shot directory (NSTTP=3 EXPEQ)."""
    d = tmp_path_factory.mktemp("shots") / "TESTTOK_001"
    helpers.make_shot(str(d))
    return str(d)


@pytest.fixture(scope="session")
def pressure_shot_dir(tmp_path_factory):
    """Pressure-dominated shot with a TT'-form EXPEQ (for mode 3)."""
    d = tmp_path_factory.mktemp("shots_p") / "PRESSTOK_001"
    helpers.make_shot(str(d), p=helpers.solovev_case(f_coeff=-0.15),
                      expeq_nsttp=1)
    return str(d)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
