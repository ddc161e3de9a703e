import typing as T

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression

from ..errors import DomainError, ShapeError


def accuracy(logits, labels) -> float:
    """Percentage of rows whose argmax matches the label.

    Args:
        logits: scores, (n, classes)
        labels: integer labels, (n,)
    """
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(
            f'Logits {tuple(logits.shape)} do not match '
            f'labels {tuple(labels.shape)}.')
    if labels.shape[0] == 0:
        raise ShapeError('Cannot compute accuracy of an empty set.')
    correct = int((logits.argmax(dim=1) == labels).sum())
    return 100.0 * correct / labels.shape[0]


def compute_metrics(per_task_aa: T.Sequence[float]) -> T.Tuple[float, float]:
    """ Average incremental accuracy and last average accuracy.

    Args:
        per_task_aa: AA measured after each task.

    Returns:
        (AIA, LAA): the mean of the list and its last element.
    """
    values = np.asarray(per_task_aa, dtype=np.float64)
    if values.size == 0:
        raise DomainError('Need at least one AA value.')
    return float(values.mean()), float(values[-1])


def mean_std(values: T.Sequence[float]) -> T.Tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DomainError('Need at least one value.')
    std = values.std(ddof=1) if values.size > 1 else 0.0
    return float(values.mean()), float(std)


def linear_baseline_accuracy(stream, max_iter: int = 1000) -> float:
    """Held-out accuracy (%) of a logistic regression trained on all
    training samples of the stream, a quick separability check."""
    from ..data import Samples
    train = Samples.concat([t.train for t in stream.tasks])
    test = stream.test_upto(len(stream))
    clf = LogisticRegression(max_iter=max_iter)
    clf.fit(train.x, train.y)
    return 100.0 * float((clf.predict(test.x) == test.y).mean())
