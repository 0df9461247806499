import numpy as np
import pytest

from compdistill.config import RunConfig, Seeds
from compdistill.data import make_blobs


@pytest.fixture(scope="session")
def blobs():
    return make_blobs(600, 4, 10, 0.5, seed=0, label_noise=0.1)


def make_cfg(**kw):
    base = dict(cohort=[{"hidden": [16]}, {"hidden": [32]}], epochs=2, batch_size=32,
                seeds=Seeds(1, 2, 3))
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture
def cfg_factory():
    return make_cfg


def params_distance(cohort_a, cohort_b):
    return max(float(np.max(np.abs(p - q)))
               for a, b in zip(cohort_a.nets, cohort_b.nets) for p, q in zip(a.params, b.params))
