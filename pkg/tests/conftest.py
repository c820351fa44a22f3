import os

# keep BLAS single-threaded: wall-clock criteria assume it, and it makes the
# cost-ratio measurements stable (must be set before numpy loads)
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from mcl.data import GenSpec, generate_pool


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture
def small_pool():
    """24 identities x 6 samples in 16 dims, easy noise level."""
    return generate_pool(GenSpec(num_identities=24, samples_per_identity=6,
                                 d_raw=16, intra_class_sigma=0.1, seed=3))


@pytest.fixture
def tiny_pool():
    """8 identities x 4 samples; enough for a fast end-to-end run."""
    return generate_pool(GenSpec(num_identities=8, samples_per_identity=4,
                                 d_raw=8, intra_class_sigma=0.05, seed=5))
