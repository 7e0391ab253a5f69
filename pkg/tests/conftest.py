import os

# Pin BLAS to one thread before numpy loads: keeps the suite deterministic
# under process-level parallelism and avoids oversubscription.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from deepes import Dataset, FitConfig


@pytest.fixture
def small_cfg():
    """Light training config for fast structural tests."""
    return FitConfig(
        learning_rate=1e-3, batch_size=64, max_epochs=30,
        hidden_plan=(16, 16), seed=7,
    )


@pytest.fixture
def toy_data():
    rng = np.random.default_rng(42)
    X = rng.random((256, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.1 * rng.standard_normal(256)
    return Dataset(X, y)
