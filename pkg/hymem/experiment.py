"""Experiment orchestration: configs, seeded runs, summary tables and plots."""
import os
import time
import typing as T
from pathlib import Path
from multiprocessing import Pool
from dataclasses import dataclass, field, fields, replace, asdict

import numpy as np
import pandas as pd
import torch
import yaml
from torch.utils.tensorboard import SummaryWriter

from .data import PROTOCOLS, TaskStream, gen_gaussian_stream, load_dataset, split_stream
from .errors import ConfigError
from .model.train import TrainConfig, train_stream
from .utils.log import logger, JsonlWriter
from .utils.metrics import compute_metrics, mean_std
from .utils.plot import Plot2d, save_svg


SUMMARY_SCHEMA_VERSION = 1

# method -> (forced synthetic ratio or None, default selector)
METHODS: T.Dict[str, T.Tuple[T.Optional[float], str]] = {
    'real-herding': (0.0, 'herding'),
    'real-random': (0.0, 'random'),
    'synthetic-only': (1.0, 'greedy'),
    'hybrid-greedy': (None, 'greedy'),
    'hybrid-random': (None, 'random'),
}

SWEEP_AXES = ('k', 'ratio')
SOURCES = ('gaussian', 'csv', 'idx', 'stream')

ENV_OUTPUT_DIR = 'HYMEM_OUTPUT_DIR'
ENV_THREADS = 'HYMEM_THREADS'


@dataclass
class StreamConfig:
    """Where the task stream comes from.

    Attributes:
        source: 'gaussian', 'csv', 'idx' or 'stream' (a saved stream dir).
        path: Data file or stream directory for file sources.
        labels_path: IDX label file.
        classes: Gaussian classes.
        per_class_n: Gaussian samples per class.
        dim: Gaussian feature dimension.
        spread: Gaussian noise scale.
        mean_scale: Scale of the Gaussian class means.
        seed: Fixed data seed; None uses the run seed.
    """
    source: str = 'gaussian'
    path: T.Optional[str] = None
    labels_path: T.Optional[str] = None
    classes: int = 10
    per_class_n: int = 125
    dim: int = 16
    spread: float = 1.0
    mean_scale: float = 1.0
    seed: T.Optional[int] = None

    def validate(self) -> "StreamConfig":
        if self.source not in SOURCES:
            raise ConfigError(
                f'Unknown stream source: {self.source}, expected one of {SOURCES}')
        if self.source != 'gaussian' and not self.path:
            raise ConfigError(f"Stream source '{self.source}' needs a path.")
        return self

    def build(self, seed: int, protocol: str, phases: int) -> TaskStream:
        seed = self.seed if self.seed is not None else seed
        if self.source == 'gaussian':
            return gen_gaussian_stream(
                self.classes, self.per_class_n, self.dim, self.spread,
                seed=seed, protocol=protocol, phases=phases,
                mean_scale=self.mean_scale)
        if self.source == 'stream':
            return TaskStream.load(self.path)
        samples = load_dataset(self.path, self.source, self.labels_path)
        return split_stream(
            samples, protocol, phases, seed, clamp_synthetic=True)


@dataclass
class ExperimentConfig:
    """One experiment: a method run over several seeds.

    ``synthetic_ratio`` and ``selector`` override the train section;
    methods with a fixed ratio reject a conflicting explicit value.
    """
    method: str = 'hybrid-greedy'
    stream: StreamConfig = field(default_factory=StreamConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    protocol: str = 'zero-base'
    phases: int = 5
    seeds: T.List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = 'outputs'
    selector: T.Optional[str] = None
    synthetic_ratio: T.Optional[float] = None
    workers: int = 1
    threads: int = 1
    save_checkpoints: bool = False
    summary_dir: T.Optional[str] = None

    def resolve(self, seed: int) -> TrainConfig:
        """The train config of one seeded run with method forcing applied."""
        if self.method not in METHODS:
            raise ConfigError(
                f'Unknown method: {self.method}, expected one of {sorted(METHODS)}')
        forced, default_selector = METHODS[self.method]
        ratio = self.train.synthetic_ratio
        if self.synthetic_ratio is not None:
            if forced is not None and self.synthetic_ratio != forced:
                raise ConfigError(
                    f'Method {self.method} uses synthetic ratio {forced}, '
                    f'got {self.synthetic_ratio}.')
            ratio = self.synthetic_ratio
        if forced is not None:
            ratio = forced
        return replace(
            self.train, synthetic_ratio=ratio,
            selector=self.selector or default_selector, seed=int(seed))

    def validate(self) -> "ExperimentConfig":
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f'Unknown protocol: {self.protocol}')
        if self.phases < 1:
            raise ConfigError(f'phases must be >= 1, got {self.phases}')
        if not self.seeds:
            raise ConfigError('Need at least one seed.')
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f'Seeds are not unique: {self.seeds}')
        if self.workers < 1 or self.threads < 1:
            raise ConfigError('workers and threads must be >= 1')
        self.stream.validate()
        self.resolve(self.seeds[0]).validate()
        return self

    @classmethod
    def from_dict(cls, d: T.Mapping[str, T.Any]) -> "ExperimentConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f'Unknown experiment options: {sorted(unknown)}')
        stream = d.pop('stream', None) or {}
        stream_known = {f.name for f in fields(StreamConfig)}
        if set(stream) - stream_known:
            raise ConfigError(
                f'Unknown stream options: {sorted(set(stream) - stream_known)}')
        train = TrainConfig.from_dict(d.pop('train', None) or {})
        if 'seeds' in d:
            d['seeds'] = [int(s) for s in d['seeds']]
        return cls(stream=StreamConfig(**stream), train=train, **d)

    def to_dict(self) -> T.Dict[str, T.Any]:
        d = asdict(self)
        d['train'] = self.train.to_dict()
        return d

    @classmethod
    def from_yaml(cls, path: T.Union[str, Path]) -> "ExperimentConfig":
        with open(path) as f:
            d = yaml.safe_load(f)
        if d is not None and not isinstance(d, dict):
            raise ConfigError(f'{path} does not hold a mapping.')
        return cls.from_dict(d or {})

    def to_yaml(self, path: T.Union[str, Path]):
        with open(path, 'w') as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    def with_env(self) -> "ExperimentConfig":
        """Apply ``HYMEM_OUTPUT_DIR`` and ``HYMEM_THREADS``."""
        cfg = self
        if os.environ.get(ENV_OUTPUT_DIR):
            cfg = replace(cfg, output_dir=os.environ[ENV_OUTPUT_DIR])
        if os.environ.get(ENV_THREADS):
            try:
                threads = int(os.environ[ENV_THREADS])
            except ValueError as e:
                raise ConfigError(
                    f'{ENV_THREADS} must be an integer') from e
            cfg = replace(cfg, threads=threads)
        return cfg


@dataclass
class RunReport:
    method: str
    seed: int
    per_task_aa: T.List[float]
    aia: float = float('nan')
    laa: float = float('nan')
    wall_time: float = 0.0

    def __post_init__(self):
        self.per_task_aa = [float(v) for v in self.per_task_aa]
        self.aia, self.laa = compute_metrics(self.per_task_aa)


def _run_name(method: str, seed: int) -> str:
    return f'{method}_seed{seed}'


def run_single(config: ExperimentConfig, seed: int) -> RunReport:
    """Train one method on one seed and store its logs, model and memory."""
    torch.set_num_threads(config.threads)
    start = time.perf_counter()
    out = Path(config.output_dir)
    name = _run_name(config.method, seed)
    train = config.resolve(seed)
    stream = config.stream.build(seed, config.protocol, config.phases)
    log = JsonlWriter(out / 'logs' / f'{name}.jsonl')
    writer = SummaryWriter(str(Path(config.summary_dir) / name)) \
        if config.summary_dir else None
    checkpoint_dir = out / 'checkpoints' / name \
        if config.save_checkpoints else None
    logger.info(f'Run {name}: {len(stream)} tasks, {stream.total_classes} classes')
    try:
        model, memory, per_task_aa = train_stream(
            stream, train, log, writer, checkpoint_dir)
    finally:
        if writer is not None:
            writer.close()
    memory.save(out / 'memory' / name)
    (out / 'models').mkdir(parents=True, exist_ok=True)
    model.save(out / 'models' / f'{name}.pth')
    report = RunReport(
        config.method, seed, per_task_aa,
        wall_time=time.perf_counter() - start)
    logger.info(f'Run {name}: AIA {report.aia:.2f}, LAA {report.laa:.2f}')
    return report


def summary_frame(reports: T.Sequence[RunReport]) -> pd.DataFrame:
    """One row per (method, seed) with AIA, LAA and the AA of every task."""
    n_tasks = max(len(r.per_task_aa) for r in reports)
    rows = []
    for r in sorted(reports, key=lambda r: (r.method, r.seed)):
        row = {
            'schema_version': SUMMARY_SCHEMA_VERSION,
            'method': r.method, 'seed': r.seed,
            'aia': r.aia, 'laa': r.laa,
        }
        for i in range(n_tasks):
            row[f'aa_task_{i + 1}'] = \
                r.per_task_aa[i] if i < len(r.per_task_aa) else np.nan
        rows.append(row)
    return pd.DataFrame(rows)


def aggregate_frame(reports: T.Sequence[RunReport]) -> pd.DataFrame:
    rows = []
    for method in sorted({r.method for r in reports}):
        sub = [r for r in reports if r.method == method]
        aia_mean, aia_std = mean_std([r.aia for r in sub])
        laa_mean, laa_std = mean_std([r.laa for r in sub])
        rows.append({
            'method': method, 'seeds': len(sub),
            'aia_mean': aia_mean, 'aia_std': aia_std,
            'laa_mean': laa_mean, 'laa_std': laa_std,
        })
    return pd.DataFrame(rows)


def write_reports(reports: T.Sequence[RunReport], out: Path):
    out.mkdir(parents=True, exist_ok=True)
    summary_frame(reports).to_csv(
        out / 'summary.csv', index=False, float_format='%.10f')
    aggregate_frame(reports).to_csv(
        out / 'aggregate.csv', index=False, float_format='%.10f')
    pd.DataFrame([
        {'method': r.method, 'seed': r.seed, 'wall_time': r.wall_time}
        for r in reports
    ]).to_csv(out / 'timings.csv', index=False)
    curves = {}
    for method in sorted({r.method for r in reports}):
        aa = np.array([r.per_task_aa for r in reports if r.method == method])
        curves[method] = aa.mean(axis=0)
    plt2d = Plot2d()
    fig = plt2d.new_fig()
    plt2d.aa_vs_task(curves)
    save_svg(fig, out / 'aa_vs_task.svg')


def run_experiment(config: ExperimentConfig) -> T.List[RunReport]:
    """Run the configured method over every seed.

    Writes ``config.yaml``, per-run JSON-lines logs, memory dumps and
    models, then ``summary.csv``, ``aggregate.csv``, ``timings.csv`` and
    ``aa_vs_task.svg`` into the output directory.
    """
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.to_yaml(out / 'config.yaml')
    logger.info(
        f'Experiment {config.method}: seeds {config.seeds}, '
        f'{config.protocol} {config.phases} phases, output {out}')
    if config.workers > 1:
        with Pool(min(config.workers, len(config.seeds))) as pool:
            reports = pool.starmap(
                run_single, [(config, s) for s in config.seeds])
    else:
        reports = [run_single(config, s) for s in config.seeds]
    reports = sorted(reports, key=lambda r: r.seed)
    write_reports(reports, out)
    aia_mean, aia_std = mean_std([r.aia for r in reports])
    laa_mean, laa_std = mean_std([r.laa for r in reports])
    logger.info(
        f'{config.method}: AIA {aia_mean:.2f} ± {aia_std:.2f}, '
        f'LAA {laa_mean:.2f} ± {laa_std:.2f}')
    return reports


def _with_axis(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == 'k':
        k = int(value)
        return replace(config, train=replace(config.train, exemplars_per_class=k))
    if METHODS[config.method][0] is not None:
        raise ConfigError(
            f'Method {config.method} has a fixed synthetic ratio, '
            'it cannot be swept.')
    return replace(config, synthetic_ratio=float(value))


def sweep(
        config: ExperimentConfig,
        axis: str,
        values: T.Sequence[float],
        methods: T.Optional[T.Sequence[str]] = None,
        ) -> pd.DataFrame:
    """Run the experiment for every value of a buffer-size ('k') or
    synthetic-ratio ('ratio') axis and every method.

    Returns:
        Table with one row per (value, method, seed), sorted ascending,
        also written to ``sweep.csv`` with an ``aia_vs_<axis>.svg`` plot.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f'Unknown sweep axis: {axis}, expected one of {SWEEP_AXES}')
    if len(values) == 0:
        raise ConfigError('Sweep needs at least one value.')
    values = sorted(values)
    methods = list(methods) if methods else [config.method]
    out = Path(config.output_dir)
    runs = []
    for value in values:
        for method in methods:
            cfg = _with_axis(replace(config, method=method), axis, value)
            cfg = replace(cfg, output_dir=str(out / f'{axis}_{value:g}' / method))
            runs.append((value, cfg.validate()))
    rows = []
    for value, cfg in runs:
        for r in run_experiment(cfg):
            rows.append({
                'axis': axis, 'value': value, 'method': r.method,
                'seed': r.seed, 'aia': r.aia, 'laa': r.laa,
            })
    table = pd.DataFrame(rows).sort_values(
        ['value', 'method', 'seed'], kind='stable').reset_index(drop=True)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / 'sweep.csv', index=False, float_format='%.10f')
    plt2d = Plot2d()
    fig = plt2d.new_fig()
    plt2d.metric_vs_axis(table, axis, 'aia')
    save_svg(fig, out / f'aia_vs_{axis}.svg')
    return table
