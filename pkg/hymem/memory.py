"""Hybrid exemplar memory: per-task synthetic and selected real exemplars
under a fixed per-class budget."""
import json
import typing as T
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import Samples
from .distill import SyntheticSet
from .errors import ConfigError, StateError
from .utils import binio
from .utils.log import logger
from .utils.rand import derive_rng


TASK_MAGIC = b'HMTK'


def split_budget(k: int, ratio: float) -> T.Tuple[int, int]:
    """Split a per-class budget into (synthetic, real) counts.

    The synthetic count is ``k * ratio`` rounded half up.
    """
    if k < 1:
        raise ConfigError(f'Budget per class must be >= 1, got {k}')
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f'Synthetic ratio must be in [0, 1], got {ratio}')
    m = min(k, int(np.floor(k * ratio + 0.5)))
    return m, k - m


@dataclass
class TaskMemory:
    """Exemplars kept from one task."""
    task_id: int
    synthetic: SyntheticSet
    real: Samples
    real_indices: np.ndarray

    def __post_init__(self):
        self.real_indices = np.asarray(self.real_indices, dtype=np.int64)
        order = np.argsort(self.real_indices, kind='stable')
        self.real_indices = self.real_indices[order]
        self.real = Samples(self.real.x[order], self.real.y[order])

    @property
    def classes(self) -> T.List[int]:
        return sorted(set(self.synthetic.classes) | set(self.real.classes))

    def count(self, c: int) -> T.Tuple[int, int]:
        n_syn = self.synthetic.data[c].shape[0] if c in self.synthetic.data else 0
        return n_syn, int((self.real.y == c).sum())

    def __len__(self) -> int:
        return len(self.synthetic) + len(self.real)


@dataclass
class HybridMemory:
    """Memory over all finished tasks.

    Objects are treated as immutable snapshots: ``merge`` returns a new
    memory and leaves the old one untouched.
    """
    budget_per_class: int
    synthetic_ratio: float = 0.5
    tasks: T.Dict[int, TaskMemory] = field(default_factory=dict)

    def __post_init__(self):
        split_budget(self.budget_per_class, self.synthetic_ratio)

    @property
    def classes(self) -> T.List[int]:
        return sorted(c for tm in self.tasks.values() for c in tm.classes)

    @property
    def num_exemplars(self) -> int:
        return sum(len(tm) for tm in self.tasks.values())

    def __len__(self) -> int:
        return self.num_exemplars

    @property
    def is_empty(self) -> bool:
        return self.num_exemplars == 0

    def per_class_counts(self) -> T.Dict[int, T.Tuple[int, int]]:
        return {
            c: tm.count(c)
            for tm in self.tasks.values() for c in tm.classes}

    def merge(self, entry: TaskMemory) -> "HybridMemory":
        """A new memory holding the current tasks plus ``entry``."""
        if entry.task_id in self.tasks:
            raise StateError(f'Task {entry.task_id} is already stored.')
        clash = set(entry.classes) & set(self.classes)
        if clash:
            raise StateError(f'Classes {sorted(clash)} are already stored.')
        if len(set(entry.real_indices.tolist())) != len(entry.real_indices):
            raise StateError('Real exemplar indices are not unique.')
        for c in entry.classes:
            n_syn, n_real = entry.count(c)
            if n_syn + n_real != self.budget_per_class:
                raise StateError(
                    f'Class {c} holds {n_syn} synthetic + {n_real} real '
                    f'exemplars, budget is {self.budget_per_class}.')
        tasks = dict(self.tasks)
        tasks[entry.task_id] = entry
        merged = HybridMemory(
            self.budget_per_class, self.synthetic_ratio,
            dict(sorted(tasks.items())))
        logger.info(
            f'Memory holds {merged.num_exemplars} exemplars over '
            f'{len(merged.classes)} classes after task {entry.task_id}')
        return merged

    def as_samples(self) -> T.Tuple[Samples, np.ndarray]:
        """All stored exemplars and their synthetic flags, in task order
        with the synthetic rows of a task before its real rows."""
        if self.is_empty:
            raise StateError('Memory is empty.')
        parts, flags = [], []
        for tm in self.tasks.values():
            for s, is_syn in ((tm.synthetic.to_samples(), True), (tm.real, False)):
                if len(s):
                    parts.append(s)
                    flags.append(np.full(len(s), is_syn))
        return Samples.concat(parts), np.concatenate(flags)

    def replay_batch(self, batch_size: int, seed: int = 0) -> Samples:
        """Uniform seeded sample without replacement over all stored
        exemplars; a permutation of everything when the batch is at
        least as large as the memory."""
        if batch_size < 1:
            raise ConfigError(f'Batch size must be >= 1, got {batch_size}')
        samples, _ = self.as_samples()
        rng = derive_rng(seed, 'replay')
        n = len(samples)
        if batch_size >= n:
            idx = rng.permutation(n)
        else:
            idx = rng.choice(n, batch_size, replace=False)
        return samples.subset(idx)

    def save(self, out_dir: T.Union[str, Path]) -> None:
        """One ``task_XXX.bin`` (synthetic grid + real rows) and one
        ``task_XXX.json`` index per task, plus ``memory.json``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for t, tm in self.tasks.items():
            stem = out_dir / f'task_{t:03d}'
            with open(stem.with_suffix('.bin'), 'wb') as f:
                binio.write_header(f, TASK_MAGIC)
                binio.write_grid(f, tm.synthetic.classes, tm.synthetic.grid())
                binio.write_rows(f, tm.real.y, tm.real_indices, tm.real.x)
            index = {
                'task_id': t,
                'classes': tm.classes,
                'synthetic_per_class': tm.synthetic.per_class,
                'synthetic_step_count': tm.synthetic.step_count,
                'clamp': tm.synthetic.clamp,
                'real_indices': tm.real_indices.tolist(),
            }
            stem.with_suffix('.json').write_text(json.dumps(index, indent=2))
        meta = {
            'format_version': binio.FORMAT_VERSION,
            'budget_per_class': self.budget_per_class,
            'synthetic_ratio': self.synthetic_ratio,
            'tasks': list(self.tasks.keys()),
        }
        (out_dir / 'memory.json').write_text(json.dumps(meta, indent=2))
        logger.info(f'Saved memory of {self.num_exemplars} exemplars to {out_dir}')

    @classmethod
    def load(cls, in_dir: T.Union[str, Path]) -> "HybridMemory":
        in_dir = Path(in_dir)
        meta = json.loads((in_dir / 'memory.json').read_text())
        tasks = {}
        for t in meta['tasks']:
            stem = in_dir / f'task_{t:03d}'
            index = json.loads(stem.with_suffix('.json').read_text())
            buf = stem.with_suffix('.bin').read_bytes()
            offset = binio.read_header(buf, TASK_MAGIC)
            classes, grid, offset = binio.read_grid(buf, offset)
            labels, indices, rows, _ = binio.read_rows(buf, offset)
            synthetic = SyntheticSet.from_grid(
                classes, grid, clamp=index.get('clamp', False))
            synthetic.step_count = index.get('synthetic_step_count', 0)
            tasks[int(t)] = TaskMemory(
                int(t), synthetic, Samples(rows, labels), indices)
        return cls(meta['budget_per_class'], meta['synthetic_ratio'], tasks)

    def to_frame(self) -> pd.DataFrame:
        """Long table of every exemplar: task, label, synthetic flag,
        source index (-1 for synthetic rows) and features."""
        records = []
        for t, tm in self.tasks.items():
            s = tm.synthetic.to_samples()
            for x, y in zip(s.x, s.y):
                records.append((t, int(y), True, -1, x))
            for x, y, i in zip(tm.real.x, tm.real.y, tm.real_indices):
                records.append((t, int(y), False, int(i), x))
        dim = max((len(r[4]) for r in records), default=0)
        df = pd.DataFrame({
            'task': [r[0] for r in records],
            'label': [r[1] for r in records],
            'synthetic': [r[2] for r in records],
            'index': [r[3] for r in records],
        })
        for j in range(dim):
            df[f'x{j + 1}'] = [r[4][j] for r in records]
        return df


def merge(
        memory: HybridMemory,
        task_id: int,
        synthetic: SyntheticSet,
        real: Samples,
        real_indices: T.Sequence[int],
        ) -> HybridMemory:
    """Extend ``memory`` with one task's synthetic and real exemplars."""
    return memory.merge(TaskMemory(task_id, synthetic, real, real_indices))
