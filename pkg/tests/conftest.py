import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hargate import ingest, nn
from hargate.core import EATING, FACIAL
from hargate.train import TrainConfig


@pytest.fixture(scope="session")
def small_eating_dataset():
    """Three short eating sessions for unit-scale training tests."""
    profiles = ingest.default_profiles(EATING)
    schedule = [(0, 8.0), (1, 40.0), (0, 8.0), (2, 40.0), (0, 8.0)]
    sessions = [
        ingest.generate_session(profiles, schedule, seed=500 + i, session_id=f"u{i}")
        for i in range(3)
    ]
    return ingest.SessionDataset(scenario=EATING, sessions=sessions)


@pytest.fixture(scope="session")
def facial_still_session():
    profiles = ingest.default_profiles(FACIAL)
    return ingest.generate_session(profiles, [(0, 10.0)], seed=900, session_id="rest")


@pytest.fixture(scope="session")
def random_eating_models():
    """Untrained (random) stage models; enough for pipeline mechanics."""
    rng = np.random.default_rng(42)
    mspec, ispec = nn.mmg_spec(), nn.inertial_spec(2)
    return (mspec, nn.ModelWeights.initial(mspec, rng),
            ispec, nn.ModelWeights.initial(ispec, rng))


@pytest.fixture(scope="session")
def random_facial_models():
    rng = np.random.default_rng(43)
    mspec, ispec = nn.mmg_spec(), nn.inertial_spec(5)
    return (mspec, nn.ModelWeights.initial(mspec, rng),
            ispec, nn.ModelWeights.initial(ispec, rng))


@pytest.fixture()
def quick_cfg():
    return TrainConfig(epochs=4, early_stop_patience=2, rng_seed=0)
