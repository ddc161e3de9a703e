import numpy as np
import pytest

from hymem.errors import DomainError, ShapeError
from hymem.utils.metrics import accuracy, compute_metrics, mean_std


def test_aia_and_laa():
    assert compute_metrics([80, 70, 60]) == (70.0, 60.0)
    assert compute_metrics([55]) == (55.0, 55.0)
    with pytest.raises(DomainError):
        compute_metrics([])


def test_accuracy():
    logits = np.array([[2.0, 1.0], [0.0, 3.0], [1.0, 0.0], [5.0, 4.0]])
    assert accuracy(logits, [0, 1, 0, 1]) == 75.0
    with pytest.raises(ShapeError):
        accuracy(logits, [0, 1])
    with pytest.raises(ShapeError):
        accuracy(np.zeros((0, 2)), [])


def test_random_predictions_are_near_chance():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4000, 4))
    labels = rng.integers(0, 4, size=4000)
    assert accuracy(logits, labels) == pytest.approx(25.0, abs=3.0)


def test_mean_std():
    assert mean_std([1.0]) == (1.0, 0.0)
    mean, std = mean_std([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert std == pytest.approx(1.0)
    with pytest.raises(DomainError):
        mean_std([])


def test_aia_matches_mean_oracle():
    values = list(np.random.default_rng(3).uniform(0, 100, size=7))
    aia, laa = compute_metrics(values)
    assert abs(aia - sum(values) / 7) < 1e-12
    assert laa == values[-1]
