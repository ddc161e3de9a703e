import typing as T
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor
import torch.nn.functional as F

from ...errors import ShapeError, ConfigError


DTYPE = torch.float64

ACTIVATIONS: T.Dict[str, T.Callable[[Tensor], Tensor]] = {
    'relu': torch.relu,
    'tanh': torch.tanh,
    'identity': lambda z: z,
}


def as_tensor(x) -> Tensor:
    """Convert an array-like to a float64 tensor (no copy for float64)."""
    if isinstance(x, Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


@dataclass
class ParamVector:
    """Parameters of a dense network.

    Layer ``i`` maps ``arch[i]`` to ``arch[i+1]`` features, then applies
    ``activations[i]``. The last layer is the linear classification head,
    its input is the embedding.
    """
    weights: T.List[Tensor]
    biases: T.List[Tensor]
    activations: T.List[str]

    def __post_init__(self):
        self.weights = [as_tensor(w) for w in self.weights]
        self.biases = [as_tensor(b) for b in self.biases]
        self.activations = list(self.activations)
        self.check()

    def check(self):
        n = len(self.weights)
        if n == 0:
            raise ShapeError('A network needs at least one layer.')
        if len(self.biases) != n or len(self.activations) != n:
            raise ShapeError(
                f'Got {n} weights, {len(self.biases)} biases and '
                f'{len(self.activations)} activations.')
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(
                    f'Layer {i}: weight {tuple(w.shape)} does not match '
                    f'bias {tuple(b.shape)}.')
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f'Layer {i} expects {w.shape[1]} inputs, previous '
                    f'layer gives {self.weights[i - 1].shape[0]}.')
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ConfigError(f'Unknown activation: {act}')
        if self.activations[-1] != 'identity':
            raise ConfigError('The head layer must be linear (identity).')

    @property
    def arch(self) -> T.List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    def tensors(self) -> T.List[Tensor]:
        """Parameters in layer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    @classmethod
    def from_tensors(
            cls, tensors: T.Sequence[Tensor],
            activations: T.Sequence[str]) -> "ParamVector":
        if len(tensors) % 2 != 0:
            raise ShapeError('Expected an even number of tensors.')
        return cls(
            weights=list(tensors[0::2]),
            biases=list(tensors[1::2]),
            activations=list(activations))

    def clone(self, requires_grad: bool = False) -> "ParamVector":
        return ParamVector.from_tensors(
            [t.detach().clone().requires_grad_(requires_grad)
             for t in self.tensors()],
            self.activations)

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in self.tensors())

    def norm(self) -> float:
        return float(torch.sqrt(sum((t ** 2).sum() for t in self.tensors())))

    def save(self, path: T.Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            'weights': [w.detach() for w in self.weights],
            'biases': [b.detach() for b in self.biases],
            'activations': self.activations,
        }, str(path))

    @classmethod
    def load(cls, path: T.Union[str, Path]) -> "ParamVector":
        state = torch.load(str(path), map_location='cpu')
        return cls(
            weights=state['weights'],
            biases=state['biases'],
            activations=state['activations'])


def init_mlp(
        input_dim: int,
        num_classes: int,
        hidden: T.Sequence[int] = (64,),
        activation: str = 'relu',
        seed: int = 0,
        ) -> ParamVector:
    """Initialize an MLP with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    weights, the same bound ``torch.nn.Linear`` uses.

    Args:
        input_dim: Feature dimension.
        num_classes: Width of the head, may be 0 for an empty head.
        hidden: Widths of the hidden layers.
        activation: Activation of every hidden layer.
        seed: Seed of the numpy generator.
    """
    if input_dim < 1 or num_classes < 0:
        raise ConfigError(
            f'Bad network size: input {input_dim}, classes {num_classes}')
    if activation not in ACTIVATIONS:
        raise ConfigError(f'Unknown activation: {activation}')
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, num_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    activations = [activation] * len(hidden) + ['identity']
    return ParamVector(weights, biases, activations)


def linear_model(weight, bias) -> ParamVector:
    """A single linear layer, its embedding is the raw input."""
    return ParamVector([weight], [bias], ['identity'])


def grow_head(
        model: ParamVector, n_new: int,
        seed: int = 0, scale: float = 0.01,
        ) -> ParamVector:
    """Append ``n_new`` output units initialized with U(-scale, scale).
    Existing head rows are kept as they are."""
    if n_new < 0:
        raise ConfigError(f'Cannot grow the head by {n_new} units.')
    if n_new == 0:
        return model.clone()
    rng = np.random.default_rng(seed)
    emb = model.embedding_dim
    new_w = as_tensor(rng.uniform(-scale, scale, (n_new, emb)))
    new_b = as_tensor(rng.uniform(-scale, scale, n_new))
    weights = [w.detach().clone() for w in model.weights]
    biases = [b.detach().clone() for b in model.biases]
    weights[-1] = torch.cat([weights[-1], new_w], dim=0)
    biases[-1] = torch.cat([biases[-1], new_b], dim=0)
    return ParamVector(weights, biases, model.activations)


def _check_batch(model: ParamVector, x: Tensor):
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(
            f'Expected a non-empty (n, d) batch, got {tuple(x.shape)}.')
    if x.shape[1] != model.input_dim:
        raise ShapeError(
            f'Batch has {x.shape[1]} features, '
            f'model expects {model.input_dim}.')


def forward(model: ParamVector, x) -> T.Tuple[Tensor, Tensor]:
    """Evaluate the network.

    Returns:
        logits: (n, num_classes)
        embeddings: (n, embedding_dim), the activations feeding the head.
    """
    x = as_tensor(x)
    _check_batch(model, x)
    h = x
    layers = zip(model.weights[:-1], model.biases[:-1], model.activations[:-1])
    for w, b, act in layers:
        h = ACTIVATIONS[act](F.linear(h, w, b))
    logits = F.linear(h, model.weights[-1], model.biases[-1])
    return logits, h


def embed(model: ParamVector, x) -> Tensor:
    """Embedding of the inputs (psi)."""
    return forward(model, x)[1]


def softmax(logits: Tensor) -> Tensor:
    return torch.softmax(logits, dim=1)
