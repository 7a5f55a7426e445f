import numpy as np
import pytest

from ncsmode.markov import LinkChain, kron_compose
from ncsmode.model import PlantModel

# stirred-tank reactor benchmark constants (also baked into the cstr5 preset)
CSTR_A = [[-0.8882, -0.0097], [293.8556, 2.2973]]
CSTR_B = [[0.011, -0.0014], [-0.3602, 0.4732]]
CSTR_LINK = [[0.8, 0.2], [0.4, 0.6]]

BENCHMARK_TRANSITION = np.array(
    [
        [0.64, 0.16, 0.16, 0.04],
        [0.32, 0.48, 0.08, 0.12],
        [0.32, 0.08, 0.48, 0.12],
        [0.16, 0.24, 0.24, 0.36],
    ]
)


@pytest.fixture(scope="session")
def cstr_plant():
    return PlantModel(
        A=CSTR_A, B=CSTR_B, C=np.eye(2), Q=np.zeros((2, 2)), R=2.5e-3 * np.eye(2)
    )


@pytest.fixture(scope="session")
def cstr_chain():
    link = LinkChain(CSTR_LINK)
    return kron_compose([link, link])
