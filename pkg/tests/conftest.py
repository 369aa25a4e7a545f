import numpy as np
import pytest

from entsearch import features as ft
from entsearch import kernels


BACKENDS = [kernels.numpy_backend, kernels.numba_backend]


@pytest.fixture(params=BACKENDS, ids=lambda b: b.name)
def backend(request):
    return request.param


def split_table(sep, n_per_class=90, patients=30, seed=0, d=20):
    table = ft.synthesize_dataset(ft.SyntheticSpec(n_per_class=n_per_class, D=20, separation=sep,
                                                   patients_per_class=patients, seed=seed))
    table = ft.patient_split(table, seed=seed)
    return ft.project_table(table, d)[0]


@pytest.fixture(scope="session")
def separable():
    """Well separated Gaussian classes, split by patient and PCA-projected."""
    return split_table(10.0)


@pytest.fixture(scope="session")
def small_separable():
    # 60 train samples
    return split_table(10.0, n_per_class=60, patients=20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
