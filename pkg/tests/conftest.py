import socket
import tempfile
from typing import List

import numpy as np
import pytest

from vertcohirf.core.config import settings
from vertcohirf.schemas import KMeansStrategy, LocalStepConfig
from vertcohirf.services.consensus import AgentState
from vertcohirf.services.datagen import gen_blobs, gen_multimodal


@pytest.fixture
def temp_output_dir():
    """Create a temporary output directory and point the settings at it"""
    with tempfile.TemporaryDirectory() as temp_dir:
        original = settings.output_dir
        settings.output_dir = temp_dir

        yield temp_dir

        settings.output_dir = original


@pytest.fixture(scope="session")
def multimodal_dataset():
    """The spheres x square dataset at its default size"""
    return gen_multimodal(n=1200, seed=0)


@pytest.fixture
def small_blobs():
    """300 well-separated samples in 3 clusters, split over 3 agents"""
    return gen_blobs(n=300, c=3, sigma=0.1, n_noise_features=3, a=3, seed=0)


@pytest.fixture
def blob_states(small_blobs) -> List[AgentState]:
    """Honest k-means agents over the generated blob partition"""
    dataset, partition = small_blobs
    return [
        AgentState(
            agent_id=i,
            x=dataset.features[:, list(columns)],
            strategy=KMeansStrategy(k=3),
            step_cfg=LocalStepConfig(),
        )
        for i, columns in enumerate(partition.sets)
    ]


@pytest.fixture
def toy_views():
    """Two agents over six samples: agent 0 splits {0,1,2} from {3,4,5}, agent 1 splits evens from odds"""
    x0 = np.array([[0.0], [0.1], [0.2], [10.0], [10.1], [10.2]])
    x1 = np.array([[0.0], [10.0], [0.1], [10.1], [0.2], [10.2]])
    return x0, x1


@pytest.fixture
def free_port() -> int:
    """A TCP port that was free a moment ago"""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]
