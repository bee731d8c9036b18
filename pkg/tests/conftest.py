import numpy as np
import pytest

from shinelab.assets import synthesize
from shinelab.studies import make_toy_instance


@pytest.fixture
def scene():
    """One deterministic toy scene (seed 0)."""
    return synthesize(0)


@pytest.fixture
def instance():
    """One deterministic latent-space instance at the default start step."""
    return make_toy_instance(0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
