import numpy as np
import pytest

from attrition import datagen, features


@pytest.fixture(scope="session")
def small_cohort():
    """Default calibrated cohort, shared across tests (seed-pinned)."""
    return datagen.generate_cohort(datagen.default_config(1200, seed=101))


@pytest.fixture(scope="session")
def matrix3(small_cohort):
    trunc = features.truncate_to_span(small_cohort, 3)
    return features.build_feature_matrix(trunc)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
