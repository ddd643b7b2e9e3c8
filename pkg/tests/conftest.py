import time

import numpy as np
import pytest

from decnet_anc.decnet import train_decnet
from decnet_anc.experiments import CANONICAL_TAU, canonical_scene

CANONICAL_EPOCHS = 12


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


class TrainedScene(tuple):
    """(scene, params, history) plus the wall-clock training time."""

    elapsed_s: float


@pytest.fixture(scope="session")
def trained_canonical():
    """DecNet trained once per session on the canonical coupled scene."""
    scene = canonical_scene()
    t0 = time.perf_counter()
    params, history = train_decnet(scene, tau=CANONICAL_TAU, epochs=CANONICAL_EPOCHS, seed=0)
    out = TrainedScene((scene, params, history))
    out.elapsed_s = time.perf_counter() - t0
    return out
