import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from mvguide.dataset import Dataset  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

DATA_DIR = Path(__file__).parent / "data"


def multi_dataset(x: dict, y: np.ndarray, categorical=()) -> Dataset:
    """Multiresponse dataset from predictor columns and a response matrix."""
    y = np.atleast_2d(np.asarray(y, float).T).T
    data = dict(x)
    roles = {k: ("categorical_predictor" if k in categorical else "numeric_predictor") for k in x}
    for k in range(y.shape[1]):
        data[f"Y{k + 1}"] = y[:, k]
        roles[f"Y{k + 1}"] = "response"
    return Dataset.from_arrays(data, roles)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
