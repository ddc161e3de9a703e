import typing as T
from dataclasses import replace, fields
from pathlib import Path

from .utils.log import logger, set_sinks


def _as_list(value) -> T.List:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, str):
        return [v for v in value.replace(',', ' ').split() if v]
    return [value]


class HyMemCLI():
    def __init__(self, seed: int = 0):
        """
        Args:
            seed: Root seed of the standalone subcommands.
        """
        from .api import HyMem
        self._hymem = HyMem(seed=seed)

    def set_logger(
            self,
            log_file: T.Optional[str] = None,
            level: str = 'INFO'):
        """Set the log level and an optional log file."""
        set_sinks(level=level, log_file=log_file)
        return self

    def gen_data(
            self,
            output_dir: str,
            classes: int = 10,
            per_class_n: int = 125,
            dim: int = 16,
            spread: float = 1.0,
            mean_scale: float = 1.0,
            protocol: str = 'zero-base',
            phases: int = 5,
            ):
        """Generate a Gaussian task stream and save it.

        Args:
            output_dir: Directory of the saved stream.
            classes: Number of classes.
            per_class_n: Samples per class.
            dim: Feature dimension.
            spread: Within-class noise scale.
            mean_scale: Scale of the class means.
            protocol: 'zero-base' or 'half-base'.
            phases: Number of incremental phases.
        """
        self._hymem.gen_data(
            output_dir, classes, per_class_n, dim, spread, mean_scale,
            protocol, phases)
        return self

    def _experiment_config(
            self,
            config: T.Optional[str],
            overrides: T.Dict[str, T.Any],
            train_overrides: T.Dict[str, T.Any],
            ):
        from .errors import ConfigError
        from .experiment import ExperimentConfig, StreamConfig
        cfg = ExperimentConfig.from_yaml(config) if config \
            else ExperimentConfig()
        cfg = cfg.with_env()
        data = overrides.pop('data', None)
        if data is not None:
            cfg = replace(cfg, stream=StreamConfig(source='stream', path=data))
        if overrides.get('seeds') is not None:
            overrides['seeds'] = [int(s) for s in _as_list(overrides['seeds'])]
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cfg.train)}
        unknown = set(train_overrides) - known
        if unknown:
            raise ConfigError(f'Unknown options: {sorted(unknown)}')
        if train_overrides:
            cfg = replace(cfg, train=replace(cfg.train, **train_overrides))
        return cfg

    def run(
            self,
            config: T.Optional[str] = None,
            data: T.Optional[str] = None,
            method: T.Optional[str] = None,
            seeds: T.Optional[T.Union[str, T.List[int]]] = None,
            protocol: T.Optional[str] = None,
            phases: T.Optional[int] = None,
            output_dir: T.Optional[str] = None,
            workers: T.Optional[int] = None,
            selector: T.Optional[str] = None,
            synthetic_ratio: T.Optional[float] = None,
            save_checkpoints: T.Optional[bool] = None,
            summary_dir: T.Optional[str] = None,
            **train_options,
            ):
        """Run an experiment over seeds.

        Args:
            config: YAML experiment file, defaults when None.
            data: Saved stream directory, overrides the stream section.
            method: real-herding, real-random, synthetic-only,
                hybrid-greedy or hybrid-random.
            seeds: Seeds, e.g. "0,1,2".
            protocol: 'zero-base' or 'half-base'.
            phases: Number of incremental phases.
            output_dir: Output directory.
            workers: Parallel runs.
            selector: Override of the method's real selector.
            synthetic_ratio: Synthetic share of the budget.
            save_checkpoints: Keep every epoch snapshot under checkpoints/.
            summary_dir: TensorBoard directory.
            train_options: Fields of the train section,
                e.g. --epochs 10 --exemplars_per_class 2.
        """
        from .experiment import run_experiment
        cfg = self._experiment_config(config, dict(
            data=data, method=method, seeds=seeds, protocol=protocol,
            phases=phases, output_dir=output_dir, workers=workers,
            selector=selector, synthetic_ratio=synthetic_ratio,
            save_checkpoints=save_checkpoints, summary_dir=summary_dir,
        ), train_options)
        reports = run_experiment(cfg)
        for r in reports:
            logger.info(
                f'{r.method} seed {r.seed}: AIA {r.aia:.2f}, LAA {r.laa:.2f}')

    def sweep(
            self,
            axis: str,
            values: T.Union[str, T.List[float]],
            methods: T.Optional[T.Union[str, T.List[str]]] = None,
            config: T.Optional[str] = None,
            data: T.Optional[str] = None,
            seeds: T.Optional[T.Union[str, T.List[int]]] = None,
            output_dir: T.Optional[str] = None,
            workers: T.Optional[int] = None,
            **train_options,
            ):
        """Sweep the buffer size ('k') or the synthetic ratio ('ratio').

        Args:
            axis: 'k' or 'ratio'.
            values: Axis values, e.g. "2,10,50".
            methods: Methods to compare, the config's method when None.
            config: YAML experiment file.
            data: Saved stream directory.
            seeds: Seeds.
            output_dir: Output directory.
            workers: Parallel runs.
            train_options: Fields of the train section.
        """
        from .experiment import sweep
        cfg = self._experiment_config(config, dict(
            data=data, seeds=seeds, output_dir=output_dir, workers=workers,
        ), train_options)
        values = [float(v) for v in _as_list(values)]
        table = sweep(cfg, axis, values, _as_list(methods) or None)
        logger.info(f'Sweep finished, {len(table)} runs')

    def distill(
            self,
            data: str,
            checkpoints: str,
            output_path: str,
            task: int = 1,
            per_class: int = 10,
            steps: int = 100,
            lr: float = 0.1,
            objective: str = 'dm',
            momentum: float = 0.5,
            csv_path: T.Optional[str] = None,
            ):
        """Standalone distillation against saved checkpoints.

        Args:
            data: Saved stream directory.
            checkpoints: Directory of .pth checkpoints (sorted by name)
                or a comma separated list of files.
            output_path: Binary synthetic set output.
            task: 1-based task id.
            per_class: Synthetic exemplars per class.
            steps: Gradient steps.
            lr: Step size.
            objective: 'dm' or 'dsa'.
            momentum: Momentum of the synthetic updates.
            csv_path: Optional CSV dump of the result.
        """
        self._hymem.load_stream(data)
        cp = Path(checkpoints)
        paths = sorted(cp.glob('*.pth')) if cp.is_dir() \
            else [Path(p) for p in _as_list(checkpoints)]
        logger.info(f'Distilling task {task} against {len(paths)} checkpoints')
        synthetic = self._hymem.distill(
            paths, task, per_class, steps, lr, objective, momentum)
        synthetic.save(output_path)
        if csv_path is not None:
            synthetic.to_csv(csv_path)
            logger.info(f'Saved synthetic exemplars to {csv_path}')

    def select(
            self,
            data: str,
            weights: str,
            output_path: str,
            task: int = 1,
            k_real: int = 10,
            selector: str = 'greedy',
            objective: str = 'dm',
            synthetic: T.Optional[str] = None,
            ):
        """Standalone real exemplar selection.

        Args:
            data: Saved stream directory.
            weights: Model file.
            output_path: JSON output of the selection.
            task: 1-based task id.
            k_real: Real exemplars per class.
            selector: 'greedy', 'herding' or 'random'.
            objective: Objective of the greedy selector.
            synthetic: Saved synthetic set to complement.
        """
        from .distill import SyntheticSet
        self._hymem.load_stream(data)
        self._hymem.load_weights(weights)
        syn = SyntheticSet.load(synthetic) if synthetic else None
        result = self._hymem.select(task, k_real, selector, objective, syn)
        result.to_json(output_path)
        logger.info(f'Saved {len(result)} selected indices to {output_path}')

    def eval(
            self,
            data: str,
            weights: str,
            upto_task: T.Optional[int] = None,
            ):
        """Print the AA of a model over tasks 1..upto_task.

        Args:
            data: Saved stream directory.
            weights: Model file.
            upto_task: Last task included, all tasks when None.
        """
        self._hymem.load_stream(data)
        self._hymem.load_weights(weights)
        aa = self._hymem.evaluate(upto_task)
        logger.info(f'AA: {aa:.2f}%')
        return aa

    def epsilon(
            self,
            output_csv: str,
            rhos: T.Union[str, T.List[float]] = '0.1,0.25,0.3',
            eps0s: T.Union[str, T.List[float]] = '0,0.3,0.6',
            steps: int = 50,
            fig_path: T.Optional[str] = None,
            ):
        """Write traces of the forgetting-bound recursion as CSV.

        Args:
            output_csv: CSV output, one row per (rho, eps0, step).
            rhos: rho values.
            eps0s: Starting values in [0, 1).
            steps: Iterations per trace.
            fig_path: Optional SVG with one panel per rho.
        """
        from .utils.plot import save_svg
        grid, fig = self._hymem.epsilon(
            [float(v) for v in _as_list(rhos)],
            [float(v) for v in _as_list(eps0s)], steps)
        grid.to_csv(output_csv, index=False)
        logger.info(f'Saved {len(grid)} trace rows to {output_csv}')
        if fig_path is not None:
            save_svg(fig, fig_path)
            logger.info(f'Saved figure to {fig_path}')

    def export_memory(
            self,
            memory_dir: str,
            output_csv: str,
            fig_path: T.Optional[str] = None,
            ):
        """Export a saved memory as CSV and an optional scatter plot.

        Args:
            memory_dir: Directory written by a run.
            output_csv: CSV output.
            fig_path: Optional SVG of the first two features.
        """
        from .utils.plot import save_svg
        self._hymem.load_memory(memory_dir)
        df, fig = self._hymem.export_memory()
        df.to_csv(output_csv, index=False, float_format='%.17g')
        logger.info(f'Saved {len(df)} exemplars to {output_csv}')
        if fig_path is not None:
            save_svg(fig, fig_path)
            logger.info(f'Saved figure to {fig_path}')
