import typing as T

import torch
from torch import Tensor
import torch.nn.functional as F

from .network.mlp import ParamVector, forward, as_tensor
from ..errors import ConfigError


LOSS_KINDS = ('ce', 'ce+kd')


def cross_entropy(logits: Tensor, labels: Tensor) -> Tensor:
    return F.cross_entropy(logits, labels)


def distillation(
        logits: Tensor, old_logits: Tensor,
        temperature: float = 2.0) -> Tensor:
    """LwF-style KL between old and new predictions on the old classes."""
    n_old = old_logits.shape[1]
    log_p = F.log_softmax(logits[:, :n_old] / temperature, dim=1)
    q = F.softmax(old_logits / temperature, dim=1)
    kl = F.kl_div(log_p, q, reduction='batchmean')
    return kl * temperature ** 2


def loss_value(
        model: ParamVector, x, y,
        loss_kind: str = 'ce',
        old_model: T.Optional[ParamVector] = None,
        temperature: float = 2.0,
        kd_weight: float = 1.0,
        ) -> Tensor:
    """Mean training loss over the batch.

    Args:
        model: The network.
        x: Inputs, (n, d).
        y: Integer labels, (n,).
        loss_kind: 'ce' or 'ce+kd'.
        old_model: Frozen previous-task network, required for 'ce+kd'.
        temperature: Distillation temperature.
        kd_weight: Weight of the distillation term.
    """
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(
            f'Unknown loss kind: {loss_kind}, expected one of {LOSS_KINDS}')
    labels = torch.as_tensor(y, dtype=torch.long)
    logits, _ = forward(model, x)
    loss = cross_entropy(logits, labels)
    if loss_kind == 'ce+kd':
        if old_model is None:
            raise ConfigError("Loss kind 'ce+kd' needs the old model.")
        with torch.no_grad():
            old_logits, _ = forward(old_model, x)
        if old_logits.shape[1] > 0:
            loss = loss + kd_weight * distillation(
                logits, old_logits.detach(), temperature)
    return loss


def value_and_grad_params(
        model: ParamVector, x, y,
        loss_kind: str = 'ce',
        create_graph: bool = False,
        **loss_kwargs,
        ) -> T.Tuple[Tensor, ParamVector]:
    """Loss value and its gradient w.r.t. every parameter.

    With ``create_graph=True`` the gradient stays differentiable w.r.t.
    the inputs ``x`` (needed by gradient-matching objectives).
    """
    params = model.clone(requires_grad=True)
    loss = loss_value(params, x, y, loss_kind, **loss_kwargs)
    grads = torch.autograd.grad(
        loss, params.tensors(), create_graph=create_graph,
        allow_unused=True)
    grads = [
        torch.zeros_like(p) if g is None else g
        for p, g in zip(params.tensors(), grads)
    ]
    return loss, ParamVector.from_tensors(grads, model.activations)


def grad_params(
        model: ParamVector, x, y,
        loss_kind: str = 'ce',
        create_graph: bool = False,
        **loss_kwargs,
        ) -> ParamVector:
    """Gradient of the mean loss w.r.t. the parameters,
    returned with the shape of the model."""
    _, gradient = value_and_grad_params(
        model, x, y, loss_kind, create_graph=create_graph, **loss_kwargs)
    return gradient


def grad_inputs(
        model: ParamVector, x,
        objective: T.Callable[[ParamVector, Tensor], Tensor],
        ) -> Tensor:
    """Gradient of ``objective(model, x)`` w.r.t. every input sample.

    The objective may set ``differentiable = False`` to mark itself as
    unusable here.
    """
    if not getattr(objective, 'differentiable', True):
        raise ConfigError(
            f'Objective {getattr(objective, "__name__", objective)} '
            'is not differentiable w.r.t. the inputs.')
    x = as_tensor(x).detach().clone().requires_grad_(True)
    value = objective(model, x)
    if not isinstance(value, Tensor) or not value.requires_grad:
        raise ConfigError('Objective does not depend on the inputs.')
    (grad,) = torch.autograd.grad(value, x, allow_unused=True)
    if grad is None:
        raise ConfigError('Objective does not depend on the inputs.')
    return grad
