import numpy as np
import pytest

from fracmg import fem, mesh, model


@pytest.fixture(scope="session")
def square_disc():
    return fem.Discretization(mesh.build_square(4.0, 3))


@pytest.fixture(scope="session")
def lshape_disc():
    return fem.Discretization(mesh.build_lshape(500.0, 2))


@pytest.fixture(scope="session")
def lshape3d_disc():
    return fem.Discretization(mesh.build_lshape(500.0, 2, extrude=250.0))


@pytest.fixture
def square_params(square_disc):
    return model.MaterialParams(
        mu=1.3, lam=0.9, g_c=0.7, kappa=1e-10,
        eps=2.0 * square_disc.finest.mesh.diameter,
        pressure_fn=lambda t: 10.0 * t)


def make_state(space, rng, t=0.1, gapped=False):
    from fracmg.selfcheck import random_state
    return random_state(space, rng, t=t, gapped=gapped)
