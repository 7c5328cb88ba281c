"""Shared fixtures.

Building the bundled Jacobians is cheap but not free; the larger models
are cached per session because several files lean on them.
"""

import numpy as np
import pytest

from gridsparse import build_dc_jacobian, load_case


@pytest.fixture(scope="session")
def model9():
    return build_dc_jacobian(load_case("ieee9"))


@pytest.fixture(scope="session")
def model30():
    return build_dc_jacobian(load_case("ieee30"))


@pytest.fixture(scope="session")
def model57():
    return build_dc_jacobian(load_case("ieee57"))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
