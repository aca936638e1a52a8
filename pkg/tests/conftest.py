import numpy as np
import pytest

from dynamics import CollapseChannel, LindbladSystem
from hilbert import DensityMatrix, HilbertSpace, Operator, fock, ladder, sigma_x


def decaying_mode(gamma: float = 1.0, dim: int = 2) -> LindbladSystem:
    a = ladder(dim)
    h = Operator(a.space, np.zeros((dim, dim)), "H")
    return LindbladSystem(a.space, h, (CollapseChannel(a, gamma, "loss"),), "decay")


def driven_qubit(omega: float, gamma: float) -> LindbladSystem:
    sx = sigma_x()
    a = ladder(2)
    return LindbladSystem(sx.space, 0.5 * omega * sx, (CollapseChannel(a, gamma, "loss"),), "driven")


@pytest.fixture
def decay_system():
    return decaying_mode(1.0)


@pytest.fixture
def excited_qubit():
    return DensityMatrix.from_state(fock(2, 1))


@pytest.fixture
def qubit_space():
    return HilbertSpace((2,))
