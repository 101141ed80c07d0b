import numpy as np
import pytest
import torch

torch.set_default_dtype(torch.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t64(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))
