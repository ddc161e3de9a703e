import json

import fire
import pandas as pd
import pytest

from hymem.cli import HyMemCLI, _as_list
from hymem.distill import SyntheticSet
from hymem.errors import ConfigError


TRAIN = dict(
    epochs=2, window=1, batch_size=16, lr_schedule='constant',
    cdd_steps_per_epoch=1, exemplars_per_class=4, hidden=(8,),
    activation='tanh')


@pytest.fixture
def trained(tmp_path):
    cli = HyMemCLI(seed=0)
    data = tmp_path / 'stream'
    cli.gen_data(str(data), classes=4, per_class_n=20, dim=4, phases=2)
    out = tmp_path / 'out'
    cli.run(
        data=str(data), seeds='0', output_dir=str(out),
        save_checkpoints=True, **TRAIN)
    return cli, data, out


def test_as_list():
    assert _as_list('0,1 2') == ['0', '1', '2']
    assert _as_list((1, 2)) == [1, 2]
    assert _as_list(3) == [3]
    assert _as_list(None) == []


def test_run_and_eval(trained):
    cli, data, out = trained
    assert (out / 'summary.csv').exists()
    model = out / 'models' / 'hybrid-greedy_seed0.pth'
    aa = cli.eval(str(data), str(model))
    summary = pd.read_csv(out / 'summary.csv')
    assert aa == pytest.approx(summary.loc[0, 'laa'], abs=1e-8)
    assert 0.0 <= cli.eval(str(data), str(model), upto_task=1) <= 100.0


def test_unknown_train_option(tmp_path):
    with pytest.raises(ConfigError):
        HyMemCLI().run(output_dir=str(tmp_path), epochz=3)


def test_distill_select_and_export(tmp_path, trained):
    cli, data, out = trained
    model = out / 'models' / 'hybrid-greedy_seed0.pth'
    syn_path = tmp_path / 'syn.bin'
    cli.distill(
        str(data), str(model), str(syn_path), task=1, per_class=2, steps=3,
        csv_path=str(tmp_path / 'syn.csv'))
    synthetic = SyntheticSet.load(syn_path)
    assert synthetic.per_class == 2
    assert len(pd.read_csv(tmp_path / 'syn.csv')) == 4

    sel_path = tmp_path / 'sel.json'
    cli.select(
        str(data), str(model), str(sel_path), task=1, k_real=2,
        synthetic=str(syn_path))
    picked = json.loads(sel_path.read_text())
    assert len(picked['indices']) == 4
    assert picked['method'] == 'greedy'

    csv = tmp_path / 'memory.csv'
    cli.export_memory(
        str(out / 'memory' / 'hybrid-greedy_seed0'), str(csv),
        fig_path=str(tmp_path / 'memory.svg'))
    assert len(pd.read_csv(csv)) == 16
    assert (tmp_path / 'memory.svg').exists()


def test_distill_from_checkpoint_dir(tmp_path, trained):
    cli, data, out = trained
    snapshots = out / 'checkpoints' / 'hybrid-greedy_seed0'
    assert len(list(snapshots.glob('*.pth'))) == 4
    cli.distill(
        str(data), str(snapshots), str(tmp_path / 'syn.bin'),
        task=2, per_class=1, steps=2)
    cli.distill(
        str(data), str(out / 'models'), str(tmp_path / 'syn.bin'),
        task=2, per_class=1, steps=2, objective='dsa')
    assert SyntheticSet.load(tmp_path / 'syn.bin').classes == [2, 3]


def test_sweep(tmp_path):
    cli = HyMemCLI()
    data = tmp_path / 'stream'
    cli.gen_data(str(data), classes=4, per_class_n=20, dim=4, phases=2)
    out = tmp_path / 'sweep'
    cli.sweep(
        'ratio', '0.25,0.75', methods='hybrid-random', data=str(data),
        seeds='0', output_dir=str(out), **TRAIN)
    table = pd.read_csv(out / 'sweep.csv')
    assert list(table.value) == [0.25, 0.75]
    assert (out / 'aia_vs_ratio.svg').exists()


def test_epsilon_through_fire(tmp_path):
    csv = tmp_path / 'eps.csv'
    fire.Fire(HyMemCLI, command=[
        'epsilon', str(csv), '--steps', '5',
        '--fig_path', str(tmp_path / 'eps.svg')])
    grid = pd.read_csv(csv)
    assert set(grid.rho) == {0.1, 0.25, 0.3}
    assert (tmp_path / 'eps.svg').exists()


def test_run_keeps_yaml_seeds(tmp_path):
    from hymem.experiment import ExperimentConfig, StreamConfig
    from hymem.model.train import TrainConfig
    cfg_path = tmp_path / 'exp.yaml'
    ExperimentConfig(
        method='real-random', seeds=[3, 7], phases=2,
        stream=StreamConfig(classes=4, per_class_n=20, dim=4),
        train=TrainConfig.from_dict(TRAIN),
    ).to_yaml(cfg_path)
    out = tmp_path / 'out'
    HyMemCLI().run(config=str(cfg_path), output_dir=str(out))
    summary = pd.read_csv(out / 'summary.csv')
    assert list(summary.seed) == [3, 7]


def test_default_seeds_without_config():
    cfg = HyMemCLI()._experiment_config(
        None, dict(seeds=None, method=None, phases=None), {})
    assert cfg.seeds == [0, 1, 2, 3, 4]
    cfg = HyMemCLI()._experiment_config(None, dict(seeds='2,5'), {})
    assert cfg.seeds == [2, 5]
