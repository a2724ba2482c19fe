import numpy as np
import pytest

from zrplab import JumpRateSpec, thermo


@pytest.fixture(scope="session")
def linear():
    return thermo.Ensemble(JumpRateSpec("linear"))


@pytest.fixture(scope="session")
def constant():
    return thermo.Ensemble(JumpRateSpec("constant"))


@pytest.fixture(scope="session")
def evans1():
    return thermo.Ensemble(JumpRateSpec("evans", b=1.0))


@pytest.fixture(scope="session")
def evans2():
    return thermo.Ensemble(JumpRateSpec("evans", b=2.0))


@pytest.fixture(scope="session")
def landim3():
    # finite critical density (~0.747): probe only below it
    return thermo.Ensemble(JumpRateSpec("landim", b=3.0))


@pytest.fixture(scope="session")
def landim15():
    return thermo.Ensemble(JumpRateSpec("landim", b=1.5))


@pytest.fixture(scope="session")
def all_builtin(linear, constant, evans2, landim15):
    # one representative per family, all with unbounded density range
    return {"linear": linear, "constant": constant,
            "evans": evans2, "landim": landim15}


def smooth_field(M, base=1.0, amplitude=0.3, mode=1):
    u = (np.arange(M) + 0.5) / M
    return base + amplitude * np.sin(2 * np.pi * mode * u)
