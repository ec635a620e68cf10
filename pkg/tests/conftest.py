"""Shared fixtures and numerical helpers."""

from __future__ import annotations

import numpy as np
import pytest

from pbadapt.data import LabeledSample, Shift, SyntheticSpec, make_synthetic_task
from pbadapt.training import TrainConfig

#: Short schedule for tests that only need a reasonably trained model.
QUICK = TrainConfig(lr_schedule=((1e-1, 40), (1e-2, 10)), restarts=1)


def central_diff(fn, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (fn(theta + e) - fn(theta - e)) / (2 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


@pytest.fixture(scope="session")
def rotate_task():
    return make_synthetic_task(SyntheticSpec(3, 2, 80, Shift("rotate", 30.0), seed=11))


@pytest.fixture(scope="session")
def blobs():
    """A well-separated 3-class source sample."""
    t = make_synthetic_task(SyntheticSpec(3, 2, 60, seed=3, separation=5.0, spread=0.5))
    return t.source


def labeled(x, y, c=None) -> LabeledSample:
    return LabeledSample(np.asarray(x, dtype=float), np.asarray(y), c)
