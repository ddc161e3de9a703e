import math
import typing as T
from pathlib import Path
from dataclasses import dataclass, asdict, fields

import numpy as np
import torch
from torch.utils.tensorboard import SummaryWriter

from .checkpoint import CheckpointWindow
from .loss import LOSS_KINDS, value_and_grad_params
from .network.mlp import ParamVector, forward, grow_head, init_mlp
from .optim import LR_SCHEDULES, SGDState, lr_at, sgd_step
from ..data import Samples, TaskStream
from ..distill import SyntheticSet, cdd_step, get_objective
from ..errors import ConfigError, ShapeError, StateError
from ..memory import HybridMemory, TaskMemory, split_budget
from ..select import SELECTORS, select
from ..utils.log import logger, JsonlWriter
from ..utils.metrics import accuracy
from ..utils.rand import derive_rng, derive_seed


@dataclass
class TrainConfig:
    """Hyper-parameters of the per-task training loop.

    Attributes:
        epochs: Epochs per task (N).
        window: Checkpoints cached for distillation (tau).
        batch_size: Minibatch size.
        lr: Base learning rate of the network.
        lr_schedule: 'piecewise', 'cosine' or 'constant'.
        milestones: Epochs after which the piecewise schedule decays.
        gamma: Piecewise decay factor.
        momentum: SGD momentum of the network.
        weight_decay: L2 penalty of the network.
        loss_kind: 'ce' or 'ce+kd'.
        kd_temperature: Distillation temperature for 'ce+kd'.
        kd_weight: Weight of the distillation term.
        cdd_steps_per_epoch: Synthetic updates after every epoch past
            the window size, 0 disables distillation.
        cdd_lr: Step size of the synthetic updates.
        cdd_momentum: Momentum of the synthetic updates.
        exemplars_per_class: Memory budget per class (k).
        synthetic_ratio: Share of the budget given to synthetic exemplars.
        objective: Distillation objective, 'dm' or 'dsa'.
        selector: Real exemplar selector, 'greedy', 'herding' or 'random'.
        replay: Train on the memory together with the new task.
        replay_batch_size: When set, every epoch replays a fresh uniform
            sample of this many memory exemplars instead of the whole
            memory.
        clamp: Clamp synthetic exemplars to [0, 1]; None follows the stream.
        strict_window: Reject a window larger than the epoch count.
        hidden: Hidden layer widths.
        activation: Hidden activation.
        seed: Root seed of every random stream.
    """
    epochs: int = 30
    window: int = 4
    batch_size: int = 32
    lr: float = 0.05
    lr_schedule: str = 'piecewise'
    milestones: T.Tuple[int, ...] = (15, 25)
    gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4
    loss_kind: str = 'ce'
    kd_temperature: float = 2.0
    kd_weight: float = 1.0
    cdd_steps_per_epoch: int = 20
    cdd_lr: float = 0.1
    cdd_momentum: float = 0.5
    exemplars_per_class: int = 20
    synthetic_ratio: float = 0.5
    objective: str = 'dm'
    selector: str = 'greedy'
    replay: bool = True
    replay_batch_size: T.Optional[int] = None
    clamp: T.Optional[bool] = None
    strict_window: bool = True
    hidden: T.Tuple[int, ...] = (64,)
    activation: str = 'relu'
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError(f'epochs must be >= 1, got {self.epochs}')
        if self.window < 1:
            raise ConfigError(f'window must be >= 1, got {self.window}')
        if self.window > self.epochs:
            msg = (f'window {self.window} exceeds epochs {self.epochs}, '
                   'the synthetic set will never be updated')
            if self.strict_window:
                raise ConfigError(msg)
            logger.warning(msg)
        if self.batch_size < 1:
            raise ConfigError(f'batch_size must be >= 1, got {self.batch_size}')
        if self.lr <= 0:
            raise ConfigError(f'lr must be positive, got {self.lr}')
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f'Unknown lr schedule: {self.lr_schedule}')
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f'Unknown loss kind: {self.loss_kind}')
        if self.cdd_steps_per_epoch < 0:
            raise ConfigError('cdd_steps_per_epoch must be >= 0')
        if self.cdd_steps_per_epoch > 0 and self.cdd_lr <= 0:
            raise ConfigError(f'cdd_lr must be positive, got {self.cdd_lr}')
        split_budget(self.exemplars_per_class, self.synthetic_ratio)
        get_objective(self.objective)
        if self.selector not in SELECTORS:
            raise ConfigError(
                f'Unknown selector: {self.selector}, expected one of {SELECTORS}')
        if self.replay_batch_size is not None and self.replay_batch_size < 1:
            raise ConfigError('replay_batch_size must be >= 1')
        return self

    @classmethod
    def from_dict(cls, d: T.Mapping[str, T.Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f'Unknown train options: {sorted(unknown)}')
        return cls(**d)

    def to_dict(self) -> T.Dict[str, T.Any]:
        d = asdict(self)
        d['milestones'] = list(self.milestones)
        d['hidden'] = list(self.hidden)
        return d


def evaluate(model: ParamVector, stream: TaskStream, t: int) -> float:
    """Average accuracy (%) over the test sets of tasks 1..t, predicting
    among all classes seen so far without task identity."""
    test = stream.test_upto(t)
    n_seen = len(stream.classes_upto(t))
    if model.num_classes < n_seen:
        raise ShapeError(
            f'Head covers {model.num_classes} classes, '
            f'tasks 1..{t} have {n_seen}.')
    with torch.no_grad():
        logits, _ = forward(model, test.x)
    return accuracy(logits[:, :n_seen], test.y)


def _epoch_data(
        train: Samples, memory: T.Optional[HybridMemory],
        config: TrainConfig, t: int, epoch: int) -> Samples:
    if not config.replay or memory is None or memory.is_empty:
        return train
    if config.replay_batch_size is None:
        replay, _ = memory.as_samples()
    else:
        replay = memory.replay_batch(
            config.replay_batch_size,
            derive_seed(config.seed, 'replay', t, epoch))
    return Samples.concat([train, replay])


def train_task(
        model: ParamVector,
        stream: TaskStream,
        t: int,
        memory: T.Optional[HybridMemory],
        config: TrainConfig,
        log: T.Optional[JsonlWriter] = None,
        writer: T.Optional[SummaryWriter] = None,
        checkpoint_dir: T.Optional[T.Union[str, Path]] = None,
        ) -> T.Tuple[ParamVector, HybridMemory, T.List[dict]]:
    """Train on task ``t`` with replay from the hybrid memory, update the
    synthetic exemplars along a sliding checkpoint window and finally
    extend the memory with this task's exemplars.

    Args:
        model: Network trained on tasks 1..t-1.
        stream: The task stream.
        t: 1-based task id.
        memory: Memory of tasks 1..t-1, None before the first task.
        config: Training configuration.
        log: Per-epoch JSON-lines sink.
        writer: TensorBoard writer.
        checkpoint_dir: When set, every epoch snapshot is saved there.

    Returns:
        The trained model, the extended memory and the per-epoch records.
    """
    config.validate()
    task = stream.task(t)
    seed = config.seed
    if t > 1 and config.replay and (memory is None or memory.is_empty):
        raise StateError(f'Replay is on but the memory is empty at task {t}.')
    if memory is not None:
        unknown = set(memory.classes) - set(stream.classes_upto(t - 1))
        if unknown:
            raise StateError(
                f'Memory holds classes {sorted(unknown)} of later tasks.')

    n_seen = len(stream.classes_upto(t))
    if model.num_classes > n_seen:
        raise StateError(
            f'Head covers {model.num_classes} classes before task {t}, '
            f'only {n_seen} are known.')
    old_model = model.clone() if model.num_classes > 0 else None
    model = grow_head(
        model, n_seen - model.num_classes,
        seed=derive_seed(seed, 'head', t))
    loss_kind = config.loss_kind if old_model is not None else 'ce'
    loss_kwargs = {}
    if loss_kind == 'ce+kd':
        loss_kwargs = dict(
            old_model=old_model, temperature=config.kd_temperature,
            kd_weight=config.kd_weight)

    k = config.exemplars_per_class
    m_syn, k_real = split_budget(k, config.synthetic_ratio)
    clamp = stream.clamp_synthetic if config.clamp is None else config.clamp
    synthetic = SyntheticSet.init_from_real(
        task.train, m_syn, derive_rng(seed, 'synthetic', t), clamp)

    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    logger.info(
        f'Task {t}: {len(task.train)} samples of classes {list(task.classes)}, '
        f'{0 if memory is None else memory.num_exemplars} in memory, '
        f'{m_syn} synthetic + {k_real} real exemplars per class')
    window = CheckpointWindow(config.window)
    state = SGDState()
    records = []
    for epoch in range(1, config.epochs + 1):
        lr = lr_at(
            epoch, config.lr, config.epochs, config.lr_schedule,
            config.milestones, config.gamma)
        data = _epoch_data(task.train, memory, config, t, epoch)
        perm = derive_rng(seed, 'shuffle', t, epoch).permutation(len(data))
        total = 0.0
        for start in range(0, len(data), config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grad = value_and_grad_params(
                model, data.x[idx], data.y[idx], loss_kind, **loss_kwargs)
            model, state = sgd_step(
                model, grad, lr, config.momentum, config.weight_decay, state)
            total += float(loss.detach()) * len(idx)
        train_loss = total / len(data)
        window.push(epoch, model)
        if checkpoint_dir is not None:
            model.save(checkpoint_dir / f'task_{t:03d}_epoch_{epoch:03d}.pth')

        cdd_loss = math.nan
        if epoch > config.window and m_syn > 0:
            for _ in range(config.cdd_steps_per_epoch):
                synthetic = cdd_step(
                    synthetic, task.train, window, config.cdd_lr,
                    config.objective, config.cdd_momentum)
            cdd_loss = synthetic.loss

        record = {
            'task': t,
            'epoch': epoch,
            'train_loss': train_loss,
            'window_size': len(window),
            'cdd_loss': None if math.isnan(cdd_loss) else cdd_loss,
            'lr': lr,
        }
        records.append(record)
        if log is not None:
            log.write(record)
        if writer is not None:
            step = (t - 1) * config.epochs + epoch
            writer.add_scalar('Loss/train', train_loss, step)
            if not math.isnan(cdd_loss):
                writer.add_scalar('Loss/cdd', cdd_loss, step)
        logger.info(
            f'Task {t}, Epoch {epoch}/{config.epochs}, '
            f'Train Loss: {train_loss:.4f}, CDD Loss: {cdd_loss:.4f}')

    if k_real > 0:
        result = select(
            config.selector, task.train,
            synthetic if m_syn > 0 else None, model, k_real,
            config.objective, seed=derive_seed(seed, 'select', t))
        indices = np.asarray(result.indices, dtype=np.int64)
    else:
        indices = np.zeros(0, dtype=np.int64)
    memory = memory or HybridMemory(k, config.synthetic_ratio)
    memory = memory.merge(TaskMemory(
        t, synthetic, task.train.subset(indices), indices))
    expected = len(memory.classes) * k
    if memory.num_exemplars != expected:
        raise StateError(
            f'Memory holds {memory.num_exemplars} exemplars after task {t}, '
            f'expected {expected}.')
    return model, memory, records


def train_stream(
        stream: TaskStream,
        config: TrainConfig,
        log: T.Optional[JsonlWriter] = None,
        writer: T.Optional[SummaryWriter] = None,
        checkpoint_dir: T.Optional[T.Union[str, Path]] = None,
        ) -> T.Tuple[ParamVector, HybridMemory, T.List[float]]:
    """Run every task of the stream in order.

    Returns:
        The final model, the final memory and the AA after each task.
    """
    config.validate()
    model = init_mlp(
        stream.feature_dim, 0, config.hidden, config.activation,
        seed=derive_seed(config.seed, 'init'))
    memory = None
    per_task_aa = []
    for t in range(1, len(stream) + 1):
        model, memory, _ = train_task(
            model, stream, t, memory, config, log, writer, checkpoint_dir)
        aa = evaluate(model, stream, t)
        per_task_aa.append(aa)
        if writer is not None:
            writer.add_scalar('Acc/AA', aa, t)
        logger.info(f'Task {t}: AA = {aa:.2f}%')
    return model, memory, per_task_aa
