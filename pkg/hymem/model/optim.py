import math
import typing as T
from dataclasses import dataclass

import torch
from torch import Tensor

from .network.mlp import ParamVector
from ..errors import ConfigError, ShapeError, NumericError


LR_SCHEDULES = ('piecewise', 'cosine', 'constant')


@dataclass
class SGDState:
    """Momentum buffers of one optimizer, owned by a single trainer."""
    buffers: T.Optional[T.List[Tensor]] = None
    step: int = 0


def sgd_step(
        model: ParamVector,
        gradient: ParamVector,
        lr: float,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
        state: T.Optional[SGDState] = None,
        ) -> T.Tuple[ParamVector, SGDState]:
    """One momentum-SGD update, same recurrence as ``torch.optim.SGD``:

        d = g + weight_decay * p
        buf = momentum * buf + d   (buf = d on the first step)
        p = p - lr * buf
    """
    if lr <= 0:
        raise ConfigError(f'Learning rate must be positive, got {lr}')
    state = state or SGDState()
    params = model.tensors()
    grads = gradient.tensors()
    if len(params) != len(grads):
        raise ShapeError('Gradient and model have different layer counts.')
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(
                f'Gradient {tuple(g.shape)} does not match '
                f'parameter {tuple(p.shape)}.')
        if not bool(torch.isfinite(g).all()):
            raise NumericError('non-finite gradient', layer=i // 2)

    new_params, new_buffers = [], []
    with torch.no_grad():
        for i, (p, g) in enumerate(zip(params, grads)):
            d = g.detach()
            if weight_decay:
                d = d + weight_decay * p.detach()
            if momentum:
                if state.buffers is None:
                    buf = d.clone()
                else:
                    buf = momentum * state.buffers[i] + d
                new_buffers.append(buf)
                d = buf
            new_params.append(p.detach() - lr * d)
    for i, p in enumerate(new_params):
        if not bool(torch.isfinite(p).all()):
            raise NumericError('non-finite parameters', layer=i // 2)
    updated = ParamVector.from_tensors(new_params, model.activations)
    new_state = SGDState(
        buffers=new_buffers if momentum else None,
        step=state.step + 1)
    return updated, new_state


def lr_at(
        epoch: int,
        base_lr: float,
        epochs: int,
        schedule: str = 'piecewise',
        milestones: T.Sequence[int] = (),
        gamma: float = 0.1,
        ) -> float:
    """Learning rate of a 1-based epoch.

    'piecewise' multiplies by ``gamma`` once the epoch passes each
    milestone, 'cosine' anneals from ``base_lr`` to zero.
    """
    if schedule == 'constant':
        return base_lr
    if schedule == 'piecewise':
        passed = sum(1 for m in milestones if epoch > m)
        return base_lr * gamma ** passed
    if schedule == 'cosine':
        return base_lr * 0.5 * (1 + math.cos(math.pi * (epoch - 1) / epochs))
    raise ConfigError(
        f'Unknown lr schedule: {schedule}, expected one of {LR_SCHEDULES}')
