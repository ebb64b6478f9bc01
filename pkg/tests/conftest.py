import numpy as np
import pytest

from dmdbench.systems import NoiseSpec, SystemSpec, build_system, simulate
from dmdbench.observables import linear_observable

STD_PAIR = (0.43301270189221935, 0.25)  # 0.5 * (sqrt(3)/2 +/- 0.5i)
STD_REAL = 0.8


@pytest.fixture
def std_spec():
    return SystemSpec(pairs=(STD_PAIR,), reals=(STD_REAL,))


@pytest.fixture
def std_system(std_spec):
    return build_system(std_spec)


@pytest.fixture
def clean_trajectory(std_system):
    """One noiseless trajectory of 50 linear observations."""
    return simulate(std_system, linear_observable(3), NoiseSpec(seed=7), 1, 50)


def spectra_match(estimated, truth, tol):
    """Multiset comparison of spectra sorted by (re, im)."""
    est = sorted((complex(z) for z in estimated), key=lambda z: (z.real, z.imag))
    tru = sorted((complex(z) for z in truth), key=lambda z: (z.real, z.imag))
    if len(est) != len(tru):
        return False
    return max(abs(a - b) for a, b in zip(est, tru)) <= tol
