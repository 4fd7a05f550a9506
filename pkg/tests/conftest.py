import pytest

from unimodal_acim import build_horseshoe, logistic, solve_map

# logistic parameter whose critical orbit lands after 3 steps on the fixed point
MU_M3 = 3.678573510428322
# shipped parameter: preperiod 4, period 1 (admits a mixing horseshoe)
MU_SHIP = 3.9277370017867517


@pytest.fixture(scope="session")
def ship_map():
    return logistic(MU_SHIP)


@pytest.fixture(scope="session")
def ship_h(ship_map):
    return build_horseshoe(ship_map)


@pytest.fixture(scope="session")
def ship(ship_map, ship_h):
    return solve_map(ship_map, horseshoe=ship_h)


@pytest.fixture(scope="session")
def sf(ship):
    return ship.spikes


@pytest.fixture(scope="session")
def rho(ship):
    return ship.density
