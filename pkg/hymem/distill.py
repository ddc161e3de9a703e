"""Continual data distillation: objectives and synthetic-exemplar updates.

An objective has the signature ``fn(S, R, checkpoints, **kwargs)`` and
returns a scalar tensor that is differentiable w.r.t. the synthetic
rows. ``S`` maps class id -> (m, d) rows, ``R`` holds the real samples
of the same classes. The value is averaged uniformly over checkpoints
and over the classes of ``R``.
"""
import typing as T
from pathlib import Path
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
from torch import Tensor

from .data import Samples
from .errors import ConfigError, DataError, ShapeError, NumericError
from .model.checkpoint import Checkpoints, as_checkpoint_list
from .model.loss import grad_params
from .model.network.mlp import ParamVector, as_tensor, embed
from .utils import binio
from .utils.log import logger


SYNTHETIC_MAGIC = b'HMSY'
EPS = 1e-12

ClassRows = T.Mapping[int, Tensor]


@dataclass
class SyntheticSet:
    """Learnable exemplars, ``data[c]`` holds the (m, d) rows of class c.

    ``loss`` is the objective value measured by the step that produced
    this set (nan before the first step).
    """
    data: T.Dict[int, Tensor]
    step_count: int = 0
    clamp: bool = False
    velocity: T.Optional[T.Dict[int, Tensor]] = None
    loss: float = float('nan')

    def __post_init__(self):
        self.data = {
            int(c): as_tensor(v).detach()
            for c, v in sorted(self.data.items())}
        shapes = {tuple(v.shape) for v in self.data.values()}
        if len(shapes) > 1:
            raise ShapeError(f'Classes hold differently shaped rows: {shapes}')
        for c, v in self.data.items():
            if v.ndim != 2:
                raise ShapeError(f'Class {c} rows must be 2D')
            if not bool(torch.isfinite(v).all()):
                raise NumericError(f'Class {c} has non-finite exemplars')
            if self.clamp and v.numel() and (v.min() < 0 or v.max() > 1):
                raise DataError(f'Class {c} exemplars leave [0, 1]')

    @property
    def classes(self) -> T.List[int]:
        return list(self.data.keys())

    @property
    def per_class(self) -> int:
        if not self.data:
            return 0
        return next(iter(self.data.values())).shape[0]

    @property
    def dim(self) -> int:
        if not self.data:
            return 0
        return next(iter(self.data.values())).shape[1]

    def __len__(self) -> int:
        return self.per_class * len(self.data)

    def copy(self) -> "SyntheticSet":
        return SyntheticSet(
            {c: v.clone() for c, v in self.data.items()},
            self.step_count, self.clamp,
            None if self.velocity is None else
            {c: v.clone() for c, v in self.velocity.items()},
            self.loss)

    def to_samples(self) -> Samples:
        if len(self) == 0:
            return Samples(np.zeros((0, self.dim)), np.zeros(0))
        x = np.concatenate([v.numpy() for v in self.data.values()])
        y = np.concatenate([
            np.full(v.shape[0], c) for c, v in self.data.items()])
        return Samples(x, y)

    @classmethod
    def init_from_real(
            cls, real: Samples, m: int,
            rng: np.random.Generator,
            clamp: bool = False,
            ) -> "SyntheticSet":
        """Pick ``m`` random real rows per class as the starting point."""
        data = {}
        for c, idx in real.class_indices().items():
            if len(idx) < m:
                raise DataError(
                    f'Class {c} has {len(idx)} samples, need {m}')
            pick = rng.choice(idx, m, replace=False) if m else idx[:0]
            rows = real.x[pick]
            if m == 0:
                rows = np.zeros((0, real.dim))
            data[c] = np.clip(rows, 0.0, 1.0) if clamp else rows.copy()
        return cls(data, clamp=clamp)

    def save(self, path: T.Union[str, Path]) -> None:
        """Binary dump: magic, version, then a little-endian f64 grid."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            binio.write_header(f, SYNTHETIC_MAGIC)
            binio.write_grid(f, self.classes, self.grid())
        logger.info(f'Saved {len(self)} synthetic exemplars to {path}')

    def grid(self) -> np.ndarray:
        if not self.data:
            return np.zeros((0, 0, 0))
        return np.stack([v.numpy() for v in self.data.values()])

    @classmethod
    def from_grid(
            cls, classes: T.Sequence[int], grid: np.ndarray,
            clamp: bool = False) -> "SyntheticSet":
        return cls({int(c): grid[i] for i, c in enumerate(classes)},
                   clamp=clamp)

    @classmethod
    def load(cls, path: T.Union[str, Path], clamp: bool = False):
        buf = Path(path).read_bytes()
        offset = binio.read_header(buf, SYNTHETIC_MAGIC)
        classes, grid, _ = binio.read_grid(buf, offset)
        return cls.from_grid(classes, grid, clamp=clamp)

    def to_csv(self, path: T.Union[str, Path]) -> None:
        s = self.to_samples()
        df = pd.DataFrame(
            {f'x{i + 1}': s.x[:, i] for i in range(s.dim)})
        df['label'] = s.y
        df.to_csv(path, index=False, float_format='%.17g')


def _group(obj: T.Union[SyntheticSet, Samples, ClassRows]) -> T.Dict[int, Tensor]:
    if isinstance(obj, SyntheticSet):
        return dict(obj.data)
    if isinstance(obj, Samples):
        return {c: as_tensor(obj.x[idx])
                for c, idx in obj.class_indices().items()}
    return {int(c): v for c, v in obj.items()}


def _check_classes(S: T.Dict[int, Tensor], R: T.Dict[int, Tensor]):
    extra = set(S) - set(R)
    if extra:
        raise DataError(
            f'Synthetic classes {sorted(extra)} have no real samples.')


def _checkpoints(checkpoints: Checkpoints) -> T.List[ParamVector]:
    cps = as_checkpoint_list(checkpoints)
    if not cps:
        raise DataError('The objective needs at least one checkpoint.')
    return cps


def _mean_embedding(theta: ParamVector, rows: Tensor) -> Tensor:
    if rows.shape[0] == 0:
        return torch.zeros(theta.embedding_dim, dtype=rows.dtype)
    return embed(theta, rows).mean(dim=0)


def dm_loss(
        S: T.Union[SyntheticSet, ClassRows],
        R: T.Union[Samples, ClassRows],
        checkpoints: Checkpoints,
        ) -> Tensor:
    """Distribution matching: squared distance between the mean
    embeddings of the synthetic and the real rows of every class.

    A class without synthetic rows contributes the squared norm of its
    real mean embedding (the empty mean is the origin).
    """
    s_rows, r_rows = _group(S), _group(R)
    _check_classes(s_rows, r_rows)
    cps = _checkpoints(checkpoints)
    total = None
    for theta in cps:
        terms = []
        for c in sorted(r_rows):
            with torch.no_grad():
                mu_r = _mean_embedding(theta, r_rows[c])
            s = s_rows.get(c)
            mu_s = _mean_embedding(theta, s) if s is not None \
                else torch.zeros_like(mu_r)
            terms.append(((mu_s - mu_r) ** 2).sum())
        value = torch.stack(terms).mean()
        total = value if total is None else total + value
    return total / len(cps)


def gradient_cosine(
        ga: T.Union[ParamVector, T.Sequence[Tensor]],
        gb: T.Union[ParamVector, T.Sequence[Tensor]],
        ) -> T.Tuple[Tensor, bool]:
    """Mean over parameter tensors of the cosine between two gradients.

    A tensor whose gradient has zero norm on either side counts as
    cosine -1 (the worst case); the flag reports that this happened.
    """
    ta = ga.tensors() if isinstance(ga, ParamVector) else list(ga)
    tb = gb.tensors() if isinstance(gb, ParamVector) else list(gb)
    if len(ta) != len(tb):
        raise ShapeError('Gradients have different layer counts.')
    terms, degenerate = [], False
    for a, b in zip(ta, tb):
        na, nb = a.norm(), b.norm()
        if float(na.detach()) < EPS or float(nb.detach()) < EPS:
            terms.append(torch.tensor(-1.0, dtype=a.dtype))
            degenerate = True
        else:
            terms.append((a * b).sum() / (na * nb))
    return torch.stack(terms).mean(), degenerate


def dsa_loss(
        S: T.Union[SyntheticSet, ClassRows],
        R: T.Union[Samples, ClassRows],
        checkpoints: Checkpoints,
        loss_kind: str = 'ce',
        return_flag: bool = False,
        warn: bool = True,
        **loss_kwargs,
        ) -> T.Union[Tensor, T.Tuple[Tensor, bool]]:
    """Gradient matching: negated layer-wise cosine between the loss
    gradients of the synthetic and the real rows of every class.

    The minimum, -1, is reached when the gradients are parallel. A class
    without synthetic rows scores the worst case, +1, and is not
    reported as degenerate.

    Args:
        return_flag: Also return whether a zero-norm gradient was met.
        warn: Log a warning when a zero-norm gradient was met.
    """
    s_rows, r_rows = _group(S), _group(R)
    _check_classes(s_rows, r_rows)
    cps = _checkpoints(checkpoints)
    total, degenerate = None, False
    for theta in cps:
        terms = []
        for c in sorted(r_rows):
            if c >= theta.num_classes:
                raise ShapeError(
                    f'Class {c} is not covered by a {theta.num_classes}-class '
                    'head.')
            r = r_rows[c]
            g_real = grad_params(
                theta, r, torch.full((r.shape[0],), c),
                loss_kind, **loss_kwargs)
            g_real = [t.detach() for t in g_real.tensors()]
            s = s_rows.get(c)
            if s is None or s.shape[0] == 0:
                cos, flag = torch.tensor(-1.0, dtype=torch.float64), False
            else:
                g_syn = grad_params(
                    theta, s, torch.full((s.shape[0],), c),
                    loss_kind, create_graph=True, **loss_kwargs)
                cos, flag = gradient_cosine(g_syn, g_real)
            degenerate = degenerate or flag
            terms.append(-cos)
        value = torch.stack(terms).mean()
        total = value if total is None else total + value
    if degenerate and warn:
        logger.warning(
            'Zero-norm gradient in the DSA objective, '
            'counted as the worst-case cosine.')
    total = total / len(cps)
    if return_flag:
        return total, degenerate
    return total


Objective = T.Callable[..., Tensor]

OBJECTIVES: T.Dict[str, Objective] = {
    'dm': dm_loss,
    'dsa': dsa_loss,
}

# Names of objectives that plug into the same interface but are not built.
RESERVED_OBJECTIVES = ('ftd', 'datadam')


def register_objective(name: str, fn: Objective) -> None:
    """Make ``fn`` available to ``cdd_step`` and the greedy selector."""
    if name in OBJECTIVES:
        raise ConfigError(f'Objective {name} is already registered.')
    OBJECTIVES[name] = fn


def get_objective(name: str) -> Objective:
    if name in OBJECTIVES:
        return OBJECTIVES[name]
    if name in RESERVED_OBJECTIVES:
        raise ConfigError(f'Objective {name} is not implemented.')
    raise ConfigError(
        f'Unknown objective: {name}, expected one of {sorted(OBJECTIVES)}')


def cdd_step(
        S: SyntheticSet,
        R: Samples,
        window: Checkpoints,
        lr: float,
        objective: str = 'dm',
        momentum: float = 0.0,
        **objective_kwargs,
        ) -> SyntheticSet:
    """One gradient step on the window-averaged objective w.r.t. the
    synthetic rows only.

    Args:
        S: Current synthetic set.
        R: Real samples of the task.
        window: Checkpoints to average over (a ``CheckpointWindow``, a
            list, or a single model).
        lr: Step size, must be positive.
        objective: Registered objective name.
        momentum: Heavy-ball momentum on the synthetic rows.
    """
    if lr <= 0:
        raise ConfigError(f'CDD learning rate must be positive, got {lr}')
    fn = get_objective(objective)
    cps = _checkpoints(window)
    leaves = {
        c: v.clone().requires_grad_(True)
        for c, v in S.data.items() if v.shape[0] > 0}
    if not leaves:
        return S.copy()
    value = fn(leaves, R, cps, **objective_kwargs)
    grads = torch.autograd.grad(
        value, list(leaves.values()), allow_unused=True)
    new_data = dict(S.data)
    new_velocity: T.Dict[int, Tensor] = {}
    with torch.no_grad():
        for (c, leaf), g in zip(leaves.items(), grads):
            g = torch.zeros_like(leaf) if g is None else g
            if not bool(torch.isfinite(g).all()):
                raise NumericError(f'non-finite gradient for class {c}')
            if momentum:
                prev = None if S.velocity is None else S.velocity.get(c)
                g = g.clone() if prev is None else momentum * prev + g
                new_velocity[c] = g
            rows = leaf.detach() - lr * g
            if S.clamp:
                rows = rows.clamp(0.0, 1.0)
            new_data[c] = rows
    logger.debug(
        f'CDD step {S.step_count + 1}: {objective} = {float(value.detach()):.6f} '
        f'over {len(cps)} checkpoints')
    return SyntheticSet(
        new_data, S.step_count + 1, S.clamp,
        new_velocity or None, float(value.detach()))


def distill_full(
        S_init: SyntheticSet,
        R: Samples,
        checkpoints: Checkpoints,
        steps: int,
        lr: float,
        objective: str = 'dm',
        momentum: float = 0.0,
        history: T.Optional[T.List[float]] = None,
        **objective_kwargs,
        ) -> SyntheticSet:
    """Distill against the full checkpoint list for ``steps`` steps.

    Args:
        history: When given, the objective value measured at each step
            is appended to it.
    """
    if steps < 1:
        raise ConfigError(f'steps must be >= 1, got {steps}')
    if lr < 0:
        raise ConfigError(f'CDD learning rate must be >= 0, got {lr}')
    cps = _checkpoints(checkpoints)
    if lr == 0:
        return S_init.copy()
    S = S_init
    for _ in range(steps):
        S = cdd_step(S, R, cps, lr, objective, momentum, **objective_kwargs)
        if history is not None:
            history.append(S.loss)
    logger.info(
        f'Distilled {len(S)} exemplars over {len(cps)} checkpoints, '
        f'{steps} steps, last {objective} = {S.loss:.6f}')
    return S
