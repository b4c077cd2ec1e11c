import os

# deterministic single-threaded numerics for the whole suite
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

from contrareg.data import SyntheticSpec, generate_corpus, split_map


@pytest.fixture(scope="session")
def small_corpus():
    """Shared small corpus: 5 families x 60 samples, 20 clean references."""
    spec = SyntheticSpec(n_families=5, samples_per_family=60, frames=12,
                         input_dim=8, seed=7, n_references=20)
    return split_map(generate_corpus(spec))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
