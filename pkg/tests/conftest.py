import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "det",
    derandomize=True,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("det")

STUB = str(Path(__file__).parent / "extractor_stub.py")


def stub_command(mode: str = "fixed") -> str:
    return f"{sys.executable} {STUB} {mode}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_matrix(rng):
    from featkit.features import FeatureMatrix

    def _make(n=5, d=8, float32=True, prefix="v"):
        values = rng.normal(size=(n, d))
        if float32:
            values = values.astype(np.float32).astype(np.float64)
        ids = tuple(f"{prefix}{i}" for i in range(n))
        return FeatureMatrix(ids, values)

    return _make
