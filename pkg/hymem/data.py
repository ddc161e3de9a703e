import re
import json
import math
import typing as T
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, ParseError, ShapeError, RangeError
from .utils.log import logger


PROTOCOLS = ('zero-base', 'half-base')
FORMATS = ('csv', 'idx')

# IDX type code -> big-endian numpy dtype
IDX_DTYPES = {
    0x08: '>u1',
    0x09: '>i1',
    0x0B: '>i2',
    0x0C: '>i4',
    0x0D: '>f4',
    0x0E: '>f8',
}


@dataclass
class Samples:
    """Labelled feature rows.

    Attributes:
        x: Features, (n, d) float64.
        y: Class ids, (n,) int64.
        label_map: Original label -> dense id, when the labels were
            remapped on ingestion.
    """
    x: np.ndarray
    y: np.ndarray
    label_map: T.Optional[T.Dict[T.Any, int]] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim == 1 and self.x.size == 0:
            self.x = self.x.reshape(0, 0)
        if self.x.ndim != 2:
            raise ShapeError(f'Features must be 2D, got {self.x.shape}')
        if self.y.shape != (self.x.shape[0],):
            raise ShapeError(
                f'{self.x.shape[0]} feature rows but {self.y.shape} labels')

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def classes(self) -> T.List[int]:
        return [int(c) for c in np.unique(self.y)]

    def subset(self, idx) -> "Samples":
        idx = np.asarray(idx, dtype=np.int64)
        return Samples(self.x[idx], self.y[idx])

    def of_class(self, c: int) -> "Samples":
        return self.subset(np.flatnonzero(self.y == c))

    def class_indices(self) -> T.Dict[int, np.ndarray]:
        return {c: np.flatnonzero(self.y == c) for c in self.classes}

    @classmethod
    def concat(cls, parts: T.Sequence["Samples"]) -> "Samples":
        parts = [p for p in parts if len(p) > 0]
        if not parts:
            raise DataError('Nothing to concatenate.')
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]))


@dataclass
class TaskSpec:
    task_id: int
    classes: T.Tuple[int, ...]
    train: Samples
    test: Samples

    def validate(self):
        if len(self.train) == 0:
            raise DataError(f'Task {self.task_id} has no training samples.')
        allowed = set(self.classes)
        for split, s in (('train', self.train), ('test', self.test)):
            bad = set(s.classes) - allowed
            if bad:
                raise DataError(
                    f'Task {self.task_id} {split} labels {sorted(bad)} '
                    f'are not in its classes {sorted(allowed)}.')


@dataclass
class TaskStream:
    """Class-incremental task sequence.

    Class ids are relabelled in task order, so task ``t`` holds a
    contiguous block of ids and tasks ``1..t`` hold ``0..|C_{1:t}|-1``.
    ``class_order[i]`` is the original id of class ``i``.
    """
    tasks: T.List[TaskSpec]
    feature_dim: int
    total_classes: int
    protocol: str
    phases: int
    seed: int
    class_order: T.List[int] = field(default_factory=list)
    clamp_synthetic: bool = False

    def __len__(self) -> int:
        return len(self.tasks)

    def task(self, t: int) -> TaskSpec:
        """Task ``t`` (1-based)."""
        if not 1 <= t <= len(self.tasks):
            raise RangeError(
                f'Task {t} out of range, stream has {len(self.tasks)} tasks')
        return self.tasks[t - 1]

    def classes_upto(self, t: int) -> T.List[int]:
        classes: T.List[int] = []
        for i in range(1, t + 1):
            classes.extend(self.task(i).classes)
        return classes

    def test_upto(self, t: int) -> Samples:
        return Samples.concat([self.task(i).test for i in range(1, t + 1)])

    def validate(self):
        seen: T.Set[int] = set()
        for task in self.tasks:
            task.validate()
            overlap = seen & set(task.classes)
            if overlap:
                raise DataError(
                    f'Classes {sorted(overlap)} appear in several tasks.')
            seen |= set(task.classes)
            for s in (task.train, task.test):
                if len(s) and s.dim != self.feature_dim:
                    raise ShapeError(
                        f'Task {task.task_id} has {s.dim} features, '
                        f'stream declares {self.feature_dim}.')
        if seen != set(range(self.total_classes)):
            raise DataError('Task classes do not cover all classes.')

    def save(self, out_dir: T.Union[str, Path]) -> None:
        """Write ``stream.json`` and ``samples.csv`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {
            'feature_dim': self.feature_dim,
            'total_classes': self.total_classes,
            'protocol': self.protocol,
            'phases': self.phases,
            'seed': self.seed,
            'class_order': [int(c) for c in self.class_order],
            'clamp_synthetic': self.clamp_synthetic,
            'tasks': [
                {'task_id': t.task_id, 'classes': [int(c) for c in t.classes]}
                for t in self.tasks
            ],
        }
        (out / 'stream.json').write_text(json.dumps(meta, indent=2))
        frames = []
        for task in self.tasks:
            for split, s in (('train', task.train), ('test', task.test)):
                df = _to_frame(s)
                df['task'] = task.task_id
                df['split'] = split
                frames.append(df)
        pd.concat(frames, ignore_index=True).to_csv(
            out / 'samples.csv', index=False, float_format='%.17g')
        logger.info(f'Saved task stream to {out}')

    @classmethod
    def load(cls, in_dir: T.Union[str, Path]) -> "TaskStream":
        src = Path(in_dir)
        meta = json.loads((src / 'stream.json').read_text())
        df = pd.read_csv(src / 'samples.csv', float_precision='round_trip')
        feat_cols = [c for c in df.columns if c.startswith('x')]
        tasks = []
        for spec in meta['tasks']:
            parts = {}
            for split in ('train', 'test'):
                sub = df[(df['task'] == spec['task_id']) &
                         (df['split'] == split)]
                parts[split] = Samples(
                    sub[feat_cols].to_numpy(np.float64),
                    sub['label'].to_numpy(np.int64))
            tasks.append(TaskSpec(
                spec['task_id'], tuple(spec['classes']),
                parts['train'], parts['test']))
        stream = cls(
            tasks=tasks,
            feature_dim=meta['feature_dim'],
            total_classes=meta['total_classes'],
            protocol=meta['protocol'],
            phases=meta['phases'],
            seed=meta['seed'],
            class_order=meta['class_order'],
            clamp_synthetic=meta['clamp_synthetic'],
        )
        stream.validate()
        return stream


def _to_frame(samples: Samples) -> pd.DataFrame:
    cols = {f'x{i + 1}': samples.x[:, i] for i in range(samples.dim)}
    df = pd.DataFrame(cols)
    df['label'] = samples.y
    return df


def _split_train_test(
        samples: Samples, test_fraction: float,
        rng: T.Optional[np.random.Generator] = None,
        ) -> T.Tuple[Samples, Samples]:
    """Per-class split; shuffles within each class when ``rng`` is given."""
    train_idx, test_idx = [], []
    for c, idx in samples.class_indices().items():
        if rng is not None:
            idx = rng.permutation(idx)
        n_test = int(round(len(idx) * test_fraction))
        if len(idx) - n_test < 1:
            raise DataError(f'Class {c} has too few samples to split.')
        train_idx.append(idx[:len(idx) - n_test])
        test_idx.append(idx[len(idx) - n_test:])
    return (samples.subset(np.concatenate(train_idx)),
            samples.subset(np.concatenate(test_idx)))


def _task_groups(
        classes: np.ndarray, protocol: str, phases: int,
        ) -> T.List[np.ndarray]:
    n = len(classes)
    if protocol == 'zero-base':
        if n < phases:
            raise ConfigError(
                f'{n} classes cannot fill {phases} zero-base phases.')
        return list(np.array_split(classes, phases))
    base = math.ceil(n / 2)
    if n - base < phases:
        raise ConfigError(
            f'{n} classes leave {n - base} classes after the half-base '
            f'first task, fewer than {phases} phases.')
    return [classes[:base]] + list(np.array_split(classes[base:], phases))


def split_stream(
        samples: Samples,
        protocol: str = 'zero-base',
        phases: int = 5,
        seed: int = 0,
        test: T.Optional[Samples] = None,
        test_fraction: float = 0.2,
        clamp_synthetic: bool = False,
        ) -> TaskStream:
    """Partition labelled samples into a class-incremental stream.

    Args:
        samples: Training samples (or all samples when ``test`` is None).
        protocol: 'zero-base' splits the classes evenly over ``phases``
            tasks; 'half-base' puts half of the classes in the first
            task and splits the rest over ``phases`` further tasks.
        phases: Number of incremental phases.
        seed: Seed of the class-order shuffle and of the test split.
        test: Held-out samples; when None a per-class split of
            ``test_fraction`` is drawn from ``samples``.
        test_fraction: Fraction held out when ``test`` is None.
        clamp_synthetic: Whether synthetic exemplars of this stream are
            kept in [0, 1].
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(
            f'Unknown protocol: {protocol}, expected one of {PROTOCOLS}')
    if phases < 1:
        raise ConfigError(f'phases must be >= 1, got {phases}')
    rng = np.random.default_rng(seed)
    if test is None:
        samples, test = _split_train_test(
            samples, test_fraction, np.random.default_rng([seed, 1]))
    classes = np.array(samples.classes, dtype=np.int64)
    unknown = set(test.classes) - set(classes.tolist())
    if unknown:
        raise DataError(f'Test classes {sorted(unknown)} have no train data.')
    order = rng.permutation(classes)
    groups = _task_groups(order, protocol, phases)
    relabel = {int(c): i for i, c in enumerate(order)}
    lut = np.vectorize(relabel.__getitem__, otypes=[np.int64])

    def pick(s: Samples, group: np.ndarray) -> Samples:
        sub = s.subset(np.flatnonzero(np.isin(s.y, group)))
        if len(sub) == 0:
            return Samples(np.zeros((0, s.dim)), np.zeros(0))
        return Samples(sub.x, lut(sub.y))

    tasks = []
    for t, group in enumerate(groups, start=1):
        tasks.append(TaskSpec(
            task_id=t,
            classes=tuple(relabel[int(c)] for c in group),
            train=pick(samples, group),
            test=pick(test, group),
        ))
    stream = TaskStream(
        tasks=tasks,
        feature_dim=samples.dim,
        total_classes=len(classes),
        protocol=protocol,
        phases=phases,
        seed=seed,
        class_order=[int(c) for c in order],
        clamp_synthetic=clamp_synthetic,
    )
    stream.validate()
    logger.info(
        f'Split {len(classes)} classes into {len(tasks)} tasks '
        f'({protocol}), sizes {[len(g) for g in groups]}')
    return stream


def gen_gaussian_stream(
        classes: int = 10,
        per_class_n: int = 125,
        dim: int = 16,
        spread: float = 1.0,
        seed: int = 0,
        protocol: str = 'zero-base',
        phases: int = 2,
        mean_scale: float = 1.0,
        test_fraction: float = 0.2,
        ) -> TaskStream:
    """Isotropic Gaussian clusters, one per class.

    Class means are drawn from N(0, mean_scale^2 I); samples are the mean
    plus N(0, spread^2 I) noise. Each class is split 80/20 into
    train/test.
    """
    if classes < 2:
        raise ConfigError(f'Need at least 2 classes, got {classes}')
    if dim < 2:
        raise ConfigError(f'Need at least 2 dimensions, got {dim}')
    if per_class_n < 5:
        raise ConfigError(
            f'Need at least 5 samples per class, got {per_class_n}')
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, mean_scale, (classes, dim))
    xs, ys = [], []
    for c in range(classes):
        xs.append(means[c] + spread * rng.normal(size=(per_class_n, dim)))
        ys.append(np.full(per_class_n, c))
    samples = Samples(np.concatenate(xs), np.concatenate(ys))
    train, test = _split_train_test(samples, test_fraction)
    return split_stream(
        train, protocol=protocol, phases=phases, seed=seed, test=test,
        clamp_synthetic=False)


def _scale_unit(x: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1] unless already inside it."""
    if x.size == 0 or (x.min() >= 0.0 and x.max() <= 1.0):
        return x
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def _remap_labels(raw: np.ndarray) -> T.Tuple[np.ndarray, T.Dict[T.Any, int]]:
    uniq = sorted(set(raw.tolist()))
    label_map = {lab: i for i, lab in enumerate(uniq)}
    return np.array([label_map[v] for v in raw.tolist()], np.int64), label_map


def _parse_label(value: str) -> T.Any:
    try:
        return int(value)
    except ValueError:
        return value


def _read_csv(path: Path, dim: T.Optional[int]) -> Samples:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        m = re.search(r'line (\d+)', str(e))
        raise ParseError(str(e), int(m.group(1)) if m else None) from e
    if 'label' not in df.columns:
        raise ParseError("missing 'label' column", line=1)
    feat_cols = [c for c in df.columns if c != 'label']
    if dim is not None and len(feat_cols) != dim:
        raise ShapeError(f'{path} has {len(feat_cols)} features, '
                         f'expected {dim}')
    raw = df[feat_cols]
    missing = (raw.isna() | (raw == '')).any(axis=1) | \
        df['label'].isna() | (df['label'] == '')
    if missing.any():
        row = int(np.flatnonzero(missing.to_numpy())[0])
        raise ShapeError(
            f'line {row + 2}: expected {len(feat_cols)} features and a label')
    x = np.empty(raw.shape, dtype=np.float64)
    for j, col in enumerate(feat_cols):
        try:
            x[:, j] = raw[col].astype(np.float64).to_numpy()
        except ValueError as e:
            bad = pd.to_numeric(raw[col], errors='coerce').isna().to_numpy()
            row = int(np.flatnonzero(bad)[0])
            raise ParseError(
                f'bad value {raw[col].iloc[row]!r} in column {col}',
                line=row + 2) from e
    labels = np.array([_parse_label(v) for v in df['label']], dtype=object)
    y, label_map = _remap_labels(labels)
    return Samples(_scale_unit(x), y, label_map)


def _read_idx(path: Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[0] != 0 or buf[1] != 0 or buf[2] not in IDX_DTYPES:
        raise ParseError(f'{path} does not start with an IDX magic number')
    ndim = buf[3]
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise ParseError(f'{path} has a truncated IDX header')
    dims = np.frombuffer(buf, '>u4', count=ndim, offset=4).astype(np.int64)
    dtype = np.dtype(IDX_DTYPES[buf[2]])
    n_items = int(np.prod(dims)) if ndim else 0
    if len(buf) - header != n_items * dtype.itemsize:
        raise ShapeError(
            f'{path}: header declares {tuple(dims)} but the payload holds '
            f'{(len(buf) - header) // dtype.itemsize} items')
    data = np.frombuffer(buf, dtype, count=n_items, offset=header)
    return data.reshape(tuple(dims))


def _write_idx(path: Path, arr: np.ndarray, code: int):
    dtype = np.dtype(IDX_DTYPES[code])
    header = bytes([0, 0, code, arr.ndim])
    dims = np.asarray(arr.shape, dtype='>u4').tobytes()
    with open(path, 'wb') as f:
        f.write(header + dims + np.ascontiguousarray(arr, dtype).tobytes())


def _default_labels_path(path: Path) -> Path:
    if 'images' not in path.name:
        raise ConfigError(
            f'Cannot derive the label file of {path}, pass labels_path.')
    return path.with_name(path.name.replace('images', 'labels'))


def _read_idx_pair(
        path: Path, labels_path: T.Optional[Path],
        dim: T.Optional[int]) -> Samples:
    images = _read_idx(path)
    labels = _read_idx(labels_path or _default_labels_path(path))
    if images.ndim < 1 or labels.ndim != 1:
        raise ShapeError('IDX labels must be 1D and images at least 1D')
    if images.shape[0] != labels.shape[0]:
        raise ShapeError(
            f'{images.shape[0]} images but {labels.shape[0]} labels')
    x = images.reshape(images.shape[0], -1)
    if dim is not None and x.shape[1] != dim:
        raise ShapeError(f'IDX rows have {x.shape[1]} features, '
                         f'expected {dim}')
    if images.dtype == np.dtype('>u1'):
        x = x.astype(np.float64) / 255.0
    else:
        x = _scale_unit(x.astype(np.float64))
    y, label_map = _remap_labels(labels.astype(np.int64))
    return Samples(x, y, label_map)


def load_dataset(
        path: T.Union[str, Path],
        fmt: str = 'csv',
        labels_path: T.Optional[T.Union[str, Path]] = None,
        dim: T.Optional[int] = None,
        ) -> Samples:
    """Read labelled samples.

    Features are scaled to [0, 1] (uint8 IDX data by 1/255, anything
    outside [0, 1] by global min-max) and labels are remapped to dense
    ids ``0..K-1`` in sorted order; the mapping is kept in
    ``Samples.label_map``.

    Args:
        path: CSV file (feature columns then ``label``) or IDX image file.
        fmt: 'csv' or 'idx'.
        labels_path: IDX label file; derived from ``path`` by replacing
            'images' with 'labels' when None.
        dim: Expected feature dimension.
    """
    path = Path(path)
    if fmt not in FORMATS:
        raise ConfigError(f'Unknown format: {fmt}, expected one of {FORMATS}')
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt == 'csv':
        samples = _read_csv(path, dim)
    else:
        samples = _read_idx_pair(
            path, Path(labels_path) if labels_path else None, dim)
    logger.info(
        f'Loaded {len(samples)} samples, {samples.dim} features, '
        f'{len(samples.classes)} classes from {path}')
    return samples


def write_dataset(
        samples: Samples,
        path: T.Union[str, Path],
        fmt: str = 'csv',
        labels_path: T.Optional[T.Union[str, Path]] = None,
        ) -> None:
    """Write samples as CSV (``x1..xd,label``) or as an IDX pair
    (float64 images, int32 labels)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = samples.y
    if samples.label_map is not None:
        inverse = {v: k for k, v in samples.label_map.items()}
        labels = np.array([inverse[int(v)] for v in samples.y], dtype=object)
    if fmt == 'csv':
        df = _to_frame(samples)
        df['label'] = labels
        df.to_csv(path, index=False, float_format='%.17g')
    elif fmt == 'idx':
        _write_idx(path, samples.x, 0x0E)
        lpath = Path(labels_path) if labels_path else \
            _default_labels_path(path)
        _write_idx(lpath, np.asarray(labels, dtype=np.int64), 0x0C)
    else:
        raise ConfigError(f'Unknown format: {fmt}, expected one of {FORMATS}')
