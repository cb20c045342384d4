import numpy as np
import pytest

from nnimpute.matching import match_units
from nnimpute.survey import SurveyDataset


@pytest.fixture
def five_unit():
    """Respondents 1, 2, 5 with y = (1, 2, 5); nonrespondents 3, 4; pi = 1, N = n = 5."""
    m = np.array([0.0, 1.0, 0.4, 2.1, 3.0])
    data = SurveyDataset(
        X=m[:, None],
        y=[1.0, 2.0, np.nan, np.nan, 5.0],
        delta=[1, 1, 0, 0, 1],
        pi=np.ones(5),
        population_size=5,
        unit_id=[1, 2, 3, 4, 5],
    )
    return data, m, match_units(m, data.delta, data.unit_id)


def random_instance(rng, n=None, equal_pi=False):
    n = n or int(rng.integers(5, 60))
    delta = (rng.random(n) < 0.7).astype(np.int8)
    delta[rng.integers(n)] = 1
    pi = np.full(n, 0.1) if equal_pi else rng.uniform(0.05, 0.9, n)
    y = np.where(delta == 1, rng.normal(size=n), np.nan)
    m = rng.normal(size=n)
    data = SurveyDataset(m[:, None], y, delta, pi, population_size=10 * n)
    return data, m, match_units(m, delta, data.unit_id)
