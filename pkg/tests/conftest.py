import pytest

from homog.dynamics import MapSpec
from homog.observables import make_observable


@pytest.fixture(scope="session")
def doubling():
    return MapSpec(kind="doubling")


@pytest.fixture(scope="session")
def lsv25():
    return MapSpec(kind="lsv", gamma=0.25, p=3.0)


@pytest.fixture(scope="session")
def quad2():
    return MapSpec(kind="quadratic", a_quad=2.0, p=4.0)


@pytest.fixture(scope="session")
def cos_doubling(doubling):
    return make_observable("cos", doubling)


@pytest.fixture(scope="session")
def linear_lsv(lsv25):
    return make_observable("linear", lsv25)
