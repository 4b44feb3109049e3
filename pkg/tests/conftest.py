import numpy as np
import pytest

import roqj


@pytest.fixture
def pauli_eternal():
    return roqj.build_pauli_model((0.5, 0.5, 0.0))


@pytest.fixture
def network7():
    return roqj.build_network_model(7, roqj.sample_network_omega(7, seed=42))


@pytest.fixture
def plus():
    return np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)


@pytest.fixture
def minus():
    return np.array([1.0, -1.0], dtype=complex) / np.sqrt(2.0)
