import numpy as np
import pytest

from ggmotion import geom
from ggmotion.autodiff import ParamStore, Scope, Tape
from ggmotion.models import ModelConfig
from ggmotion.topology import build_topology, chain


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    # Environment overrides must not leak into tests that do not set them
    for name in ("GGMOTION_SEED", "GGMOTION_THREADS", "GGMOTION_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return geom.Rng(1234)


@pytest.fixture
def fork():
    """0 -> 1 -> 2, 0 -> 3 -> 4, split into two groups"""
    return build_topology([None, 0, 1, 0, 3], [[0, 1, 2], [3, 4]])


@pytest.fixture
def chain5():
    return chain(5, 2)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(n_joints=5, t_h=4, t_f=3, channels=4, hidden=6, blocks=2, seed=7)


@pytest.fixture
def scope_factory():
    def make(store: ParamStore, prefix: str = ""):
        tape = Tape()
        return tape, Scope(tape, store, prefix)
    return make


def random_feature(rng: geom.Rng, *shape):
    return rng.normal(0.0, 1.0, size=shape)


def rotate(rotation: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a 3x3 matrix to the coordinate axis of (..., 3, C) features"""
    return np.einsum("ij,...jc->...ic", rotation, x)
