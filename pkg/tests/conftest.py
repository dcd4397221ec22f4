import numpy as np
import pytest

from voltrace.model import ClassParams, DispersionFn
from voltrace.prior import PriorSpec, dispersion_from_latent


@pytest.fixture
def params():
    return ClassParams(kappa=0.5, big_k=2.0, lip_m=2.0)


@pytest.fixture
def spec(params):
    return PriorSpec(params=params, m=400)


@pytest.fixture
def sigma0(spec):
    # reachable through the prior's own link-and-integrate map
    return dispersion_from_latent(spec, np.zeros(spec.m + 1))


def random_class_fn(rng: np.random.Generator, params: ClassParams, m: int) -> DispersionFn:
    """Random class member: a clipped random walk on the knot grid.

    Clipping to [kappa, K] can only shrink a step, so the discrete Lipschitz
    certificate survives.
    """
    steps = rng.uniform(-params.lip_m / m, params.lip_m / m, size=m)
    values = np.empty(m + 1)
    values[0] = rng.uniform(params.kappa, params.big_k)
    for j in range(m):
        values[j + 1] = np.clip(values[j] + steps[j], params.kappa, params.big_k)
    return DispersionFn(values, params)
