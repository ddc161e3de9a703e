import numpy as np
import pandas as pd
import pytest

from hymem.data import Samples, write_dataset
from hymem.errors import ConfigError
from hymem.experiment import (
    SUMMARY_SCHEMA_VERSION, ExperimentConfig, RunReport, StreamConfig,
    aggregate_frame, run_experiment, run_single, summary_frame, sweep,
)
from hymem.model.train import TrainConfig


def tiny_experiment(output_dir, **kw):
    base = dict(
        method='hybrid-greedy',
        stream=StreamConfig(classes=4, per_class_n=20, dim=4),
        train=TrainConfig(
            epochs=3, window=2, batch_size=16, lr_schedule='constant',
            cdd_steps_per_epoch=2, exemplars_per_class=4, hidden=(8,),
            activation='tanh'),
        phases=2, seeds=[0, 1], output_dir=str(output_dir))
    base.update(kw)
    return ExperimentConfig(**base)


def test_method_forcing():
    cfg = ExperimentConfig(method='real-herding')
    train = cfg.resolve(3)
    assert (train.synthetic_ratio, train.selector, train.seed) == (0.0, 'herding', 3)
    train = ExperimentConfig(method='synthetic-only').resolve(0)
    assert (train.synthetic_ratio, train.selector) == (1.0, 'greedy')
    train = ExperimentConfig(method='hybrid-random').resolve(0)
    assert (train.synthetic_ratio, train.selector) == (0.5, 'random')
    train = ExperimentConfig(
        method='hybrid-greedy', synthetic_ratio=0.3, selector='herding').resolve(0)
    assert (train.synthetic_ratio, train.selector) == (0.3, 'herding')
    train = ExperimentConfig(method='real-random', synthetic_ratio=0.0).resolve(0)
    assert train.synthetic_ratio == 0.0


def test_conflicting_ratio_is_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig(method='real-random', synthetic_ratio=0.5).resolve(0)
    with pytest.raises(ConfigError):
        ExperimentConfig(method='synthetic-only', synthetic_ratio=0.2).resolve(0)
    with pytest.raises(ConfigError):
        ExperimentConfig(method='dream').resolve(0)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=[]).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=[1, 1]).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(protocol='one-shot').validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(stream=StreamConfig(source='csv')).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(stream=StreamConfig(source='hdf5', path='x')).validate()
    ExperimentConfig().validate()


def test_yaml_roundtrip(tmp_path):
    cfg = tiny_experiment(tmp_path, synthetic_ratio=0.25, workers=2)
    path = tmp_path / 'exp.yaml'
    cfg.to_yaml(path)
    assert ExperimentConfig.from_yaml(path) == cfg


def test_yaml_errors(tmp_path):
    path = tmp_path / 'bad.yaml'
    path.write_text('method: hybrid-greedy\nepochz: 3\n')
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(path)
    path.write_text('train:\n  epochz: 3\n')
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(path)
    path.write_text('stream:\n  colour: red\n')
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(path)
    path.write_text('- 1\n- 2\n')
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(path)
    path.write_text('')
    assert ExperimentConfig.from_yaml(path) == ExperimentConfig()


def test_env_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv('HYMEM_OUTPUT_DIR', str(tmp_path / 'env'))
    monkeypatch.setenv('HYMEM_THREADS', '3')
    cfg = ExperimentConfig().with_env()
    assert cfg.output_dir == str(tmp_path / 'env')
    assert cfg.threads == 3
    monkeypatch.setenv('HYMEM_THREADS', 'many')
    with pytest.raises(ConfigError):
        ExperimentConfig().with_env()


def test_run_report_metrics():
    r = RunReport('hybrid-greedy', 0, [80, 70, 60])
    assert (r.aia, r.laa) == (70.0, 60.0)


def test_summary_and_aggregate_tables():
    reports = [
        RunReport('real-random', 1, [60, 50]),
        RunReport('hybrid-greedy', 0, [80, 70]),
        RunReport('real-random', 0, [70, 60]),
    ]
    summary = summary_frame(reports)
    assert list(summary.columns) == [
        'schema_version', 'method', 'seed', 'aia', 'laa',
        'aa_task_1', 'aa_task_2']
    assert (summary.schema_version == SUMMARY_SCHEMA_VERSION).all()
    assert list(zip(summary.method, summary.seed)) == [
        ('hybrid-greedy', 0), ('real-random', 0), ('real-random', 1)]
    agg = aggregate_frame(reports).set_index('method')
    assert agg.loc['real-random', 'aia_mean'] == pytest.approx(60.0)
    assert agg.loc['real-random', 'laa_std'] == pytest.approx(np.sqrt(50.0))
    assert agg.loc['hybrid-greedy', 'aia_std'] == 0.0


def test_run_writes_outputs_and_is_reproducible(tmp_path):
    reports = run_experiment(tiny_experiment(tmp_path / 'a'))
    run_experiment(tiny_experiment(tmp_path / 'b'))
    a, b = tmp_path / 'a', tmp_path / 'b'
    assert [r.seed for r in reports] == [0, 1]
    assert all(len(r.per_task_aa) == 2 for r in reports)
    for name in ('config.yaml', 'summary.csv', 'aggregate.csv',
                 'timings.csv', 'aa_vs_task.svg'):
        assert (a / name).exists()
    assert (a / 'logs' / 'hybrid-greedy_seed0.jsonl').exists()
    assert (a / 'models' / 'hybrid-greedy_seed1.pth').exists()
    assert (a / 'memory' / 'hybrid-greedy_seed0' / 'memory.json').exists()
    assert (a / 'summary.csv').read_bytes() == (b / 'summary.csv').read_bytes()
    assert (a / 'aa_vs_task.svg').read_bytes() == (b / 'aa_vs_task.svg').read_bytes()
    summary = pd.read_csv(a / 'summary.csv')
    assert 'wall_time' not in summary.columns
    assert list(summary.seed) == [0, 1]


def test_stream_sources(tmp_path, small_stream):
    small_stream.save(tmp_path / 'stream')
    built = StreamConfig(source='stream', path=str(tmp_path / 'stream')).build(
        7, 'zero-base', 2)
    assert built.class_order == small_stream.class_order

    rng = np.random.default_rng(0)
    samples = Samples(rng.uniform(size=(30, 3)), np.repeat([0, 1, 2], 10))
    write_dataset(samples, tmp_path / 'data.csv')
    stream = StreamConfig(source='csv', path=str(tmp_path / 'data.csv')).build(
        0, 'zero-base', 3)
    assert len(stream) == 3
    assert stream.clamp_synthetic

    fixed = StreamConfig(classes=4, per_class_n=10, dim=3, seed=5)
    a = fixed.build(0, 'zero-base', 2)
    b = fixed.build(1, 'zero-base', 2)
    np.testing.assert_array_equal(a.task(1).train.x, b.task(1).train.x)


def test_sweep_over_buffer_size(tmp_path):
    cfg = tiny_experiment(tmp_path, seeds=[0])
    table = sweep(cfg, 'k', [4, 2], methods=['real-random', 'hybrid-random'])
    assert list(table.value) == [2, 2, 4, 4]
    assert list(table.method) == ['hybrid-random', 'real-random'] * 2
    assert (tmp_path / 'sweep.csv').exists()
    assert (tmp_path / 'aia_vs_k.svg').exists()
    assert (tmp_path / 'k_2' / 'real-random' / 'summary.csv').exists()


def test_sweep_errors(tmp_path):
    cfg = tiny_experiment(tmp_path, seeds=[0])
    with pytest.raises(ConfigError):
        sweep(cfg, 'epochs', [1])
    with pytest.raises(ConfigError):
        sweep(cfg, 'k', [])
    with pytest.raises(ConfigError):
        sweep(cfg, 'ratio', [0.5], methods=['real-herding'])


@pytest.mark.slow
def test_larger_buffer_helps(tmp_path):
    cfg = ExperimentConfig(
        method='real-herding',
        stream=StreamConfig(classes=10, per_class_n=60, dim=16),
        train=TrainConfig(
            epochs=10, window=4, lr_schedule='constant', hidden=(32,)),
        phases=5, seeds=[0, 1], output_dir=str(tmp_path))
    table = sweep(cfg, 'k', [1, 20])
    means = table.groupby('value').aia.mean()
    assert means.loc[20] > means.loc[1]


def test_hybrid_reduces_to_baselines(tmp_path):
    def aa(out, **kw):
        return run_single(tiny_experiment(tmp_path / out, **kw), 0).per_task_aa

    assert aa('h0', synthetic_ratio=0.0, selector='herding') == \
        aa('real', method='real-herding')
    assert aa('h1', synthetic_ratio=1.0) == aa('syn', method='synthetic-only')


def test_ratio_sweep_endpoints(tmp_path):
    cfg = tiny_experiment(tmp_path, seeds=[0])
    table = sweep(cfg, 'ratio', [1.0, 0.0, 0.5])
    assert list(table.value) == [0.0, 0.5, 1.0]
    # greedy without synthetic rows keeps the herding picks
    real = run_single(tiny_experiment(tmp_path / 'r', method='real-herding'), 0)
    syn = run_single(tiny_experiment(tmp_path / 's', method='synthetic-only'), 0)
    assert table.aia.iloc[0] == real.aia
    assert table.aia.iloc[-1] == syn.aia


BENCH_METHODS = ['real-herding', 'synthetic-only', 'hybrid-greedy', 'hybrid-random']


@pytest.fixture(scope='module')
def desk_benchmark(tmp_path_factory):
    """Mean AIA per (k, method) over ten seeds on the desk benchmark."""
    cfg = ExperimentConfig(
        stream=StreamConfig(classes=10, per_class_n=125, dim=8,
                            spread=2.0, mean_scale=2.0),
        train=TrainConfig(hidden=(64,)),
        phases=5, seeds=list(range(10)), workers=4,
        output_dir=str(tmp_path_factory.mktemp('desk')))
    table = sweep(cfg, 'k', [2, 50], methods=BENCH_METHODS)
    return table.groupby(['value', 'method']).aia.mean()


@pytest.mark.slow
def test_synthetic_beats_herding_at_tiny_buffers(desk_benchmark):
    assert desk_benchmark[2, 'synthetic-only'] > desk_benchmark[2, 'real-herding']


@pytest.mark.slow
def test_herding_beats_synthetic_at_large_buffers(desk_benchmark):
    assert desk_benchmark[50, 'real-herding'] > desk_benchmark[50, 'synthetic-only']


@pytest.mark.slow
def test_hybrid_tracks_the_better_baseline_at_large_buffers(desk_benchmark):
    best = max(desk_benchmark[50, 'real-herding'],
               desk_benchmark[50, 'synthetic-only'])
    assert desk_benchmark[50, 'hybrid-greedy'] >= best - 1.0


@pytest.mark.slow
@pytest.mark.xfail(
    reason='one synthetic row plus one real trails two jointly '
           'distilled rows by 2 to 3 points on isotropic Gaussians',
    strict=False)
def test_hybrid_tracks_the_better_baseline_at_tiny_buffers(desk_benchmark):
    best = max(desk_benchmark[2, 'real-herding'],
               desk_benchmark[2, 'synthetic-only'])
    assert desk_benchmark[2, 'hybrid-greedy'] >= best - 1.0


@pytest.mark.slow
def test_greedy_complement_beats_random_at_tiny_buffers(desk_benchmark):
    assert desk_benchmark[2, 'hybrid-greedy'] > desk_benchmark[2, 'hybrid-random']
