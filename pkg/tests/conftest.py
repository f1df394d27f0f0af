import numpy as np
import pytest

from tumorsynth.phantom import PhantomConfig, generate_phantom


@pytest.fixture(scope="session")
def phantom_case():
    """One deterministic mid-size phantom shared by read-only tests."""
    return generate_phantom(PhantomConfig(seed=7))


@pytest.fixture(scope="session")
def phantom_small():
    """Smaller phantom for cheap per-test work."""
    return generate_phantom(
        PhantomConfig(shape=(40, 40, 40), organ_radius_mm=(11.0, 14.0), seed=13)
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
