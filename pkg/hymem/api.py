import typing as T
from pathlib import Path

import numpy as np
import pandas as pd

from .utils.log import logger

if T.TYPE_CHECKING:
    from matplotlib.figure import Figure
    from .data import TaskStream
    from .distill import SyntheticSet
    from .experiment import ExperimentConfig, RunReport
    from .memory import HybridMemory
    from .model.network.mlp import ParamVector
    from .select import SelectionResult


class HyMem():
    def __init__(self, seed: int = 0) -> None:
        """
        Args:
            seed: Root seed of the standalone operations
                (synthetic initialization, random selection).
        """
        self.seed = seed
        self.stream: T.Optional["TaskStream"] = None
        self.model: T.Optional["ParamVector"] = None
        self.memory: T.Optional["HybridMemory"] = None

    def gen_data(
            self,
            output_dir: T.Optional[str] = None,
            classes: int = 10,
            per_class_n: int = 125,
            dim: int = 16,
            spread: float = 1.0,
            mean_scale: float = 1.0,
            protocol: str = 'zero-base',
            phases: int = 5,
            ) -> "TaskStream":
        """Generate a Gaussian class-incremental stream.

        Args:
            output_dir: Where to save the stream, not saved when None.
            classes: Number of classes.
            per_class_n: Samples per class.
            dim: Feature dimension.
            spread: Within-class noise scale.
            mean_scale: Scale of the class means.
            protocol: 'zero-base' or 'half-base'.
            phases: Number of incremental phases.
        """
        from .data import gen_gaussian_stream
        from .utils.metrics import linear_baseline_accuracy
        self.stream = gen_gaussian_stream(
            classes, per_class_n, dim, spread, seed=self.seed,
            protocol=protocol, phases=phases, mean_scale=mean_scale)
        acc = linear_baseline_accuracy(self.stream)
        logger.info(f'Linear baseline accuracy: {acc:.2f}%')
        if output_dir is not None:
            self.stream.save(output_dir)
        return self.stream

    def load_stream(
            self,
            path: str,
            fmt: str = 'stream',
            labels_path: T.Optional[str] = None,
            protocol: str = 'zero-base',
            phases: int = 5,
            ) -> "TaskStream":
        """Load a saved stream directory, or split a CSV / IDX dataset.

        Args:
            path: Stream directory or data file.
            fmt: 'stream', 'csv' or 'idx'.
            labels_path: IDX label file.
            protocol: Split protocol for data files.
            phases: Number of phases for data files.
        """
        from .data import TaskStream, load_dataset, split_stream
        if fmt == 'stream':
            self.stream = TaskStream.load(path)
        else:
            samples = load_dataset(path, fmt, labels_path)
            self.stream = split_stream(
                samples, protocol, phases, self.seed, clamp_synthetic=True)
        return self.stream

    def _require_stream(self) -> "TaskStream":
        if self.stream is None:
            from .errors import StateError
            raise StateError('No stream loaded, call load_stream first.')
        return self.stream

    def _require_model(self) -> "ParamVector":
        if self.model is None:
            from .errors import StateError
            raise StateError('No model loaded, call load_weights first.')
        return self.model

    def load_weights(self, weights_path: T.Union[str, Path]) -> "ParamVector":
        from .model.network.mlp import ParamVector
        logger.info(f'Loading weights from {weights_path}')
        self.model = ParamVector.load(weights_path)
        return self.model

    def save_weights(self, weights_path: T.Union[str, Path]) -> None:
        self._require_model().save(weights_path)
        logger.info(f'Saved weights to {weights_path}')

    def load_memory(self, memory_dir: T.Union[str, Path]) -> "HybridMemory":
        from .memory import HybridMemory
        self.memory = HybridMemory.load(memory_dir)
        logger.info(
            f'Loaded memory of {self.memory.num_exemplars} exemplars '
            f'from {memory_dir}')
        return self.memory

    def evaluate(self, upto_task: T.Optional[int] = None) -> float:
        """AA (%) of the loaded model over tasks 1..upto_task
        (all tasks when None)."""
        from .model.train import evaluate
        stream = self._require_stream()
        t = len(stream) if upto_task is None else upto_task
        return evaluate(self._require_model(), stream, t)

    def distill(
            self,
            checkpoint_paths: T.Sequence[T.Union[str, Path]],
            task: int = 1,
            per_class: int = 10,
            steps: int = 100,
            lr: float = 0.1,
            objective: str = 'dm',
            momentum: float = 0.5,
            init_path: T.Optional[str] = None,
            ) -> "SyntheticSet":
        """Distill synthetic exemplars of one task against a saved list
        of checkpoints.

        Args:
            checkpoint_paths: Model files, used in the given order.
            task: 1-based task whose training samples are matched.
            per_class: Synthetic exemplars per class, ignored with
                ``init_path``.
            steps: Gradient steps.
            lr: Step size.
            objective: 'dm' or 'dsa'.
            momentum: Momentum of the synthetic updates.
            init_path: Start from a saved synthetic set instead of
                random real samples.
        """
        from .distill import SyntheticSet, distill_full
        from .model.network.mlp import ParamVector
        from .utils.rand import derive_rng
        stream = self._require_stream()
        real = stream.task(task).train
        checkpoints = [ParamVector.load(p) for p in checkpoint_paths]
        if init_path is not None:
            s_init = SyntheticSet.load(init_path, clamp=stream.clamp_synthetic)
        else:
            s_init = SyntheticSet.init_from_real(
                real, per_class, derive_rng(self.seed, 'synthetic', task),
                stream.clamp_synthetic)
        return distill_full(
            s_init, real, checkpoints, steps, lr, objective, momentum)

    def select(
            self,
            task: int = 1,
            k_real: int = 10,
            selector: str = 'greedy',
            objective: str = 'dm',
            synthetic: T.Optional["SyntheticSet"] = None,
            ) -> "SelectionResult":
        """Select real exemplars of one task with the loaded model.

        Args:
            task: 1-based task id.
            k_real: Real exemplars per class.
            selector: 'greedy', 'herding' or 'random'.
            objective: Objective of the greedy selector.
            synthetic: Synthetic set the picks complement.
        """
        from .select import select
        stream = self._require_stream()
        return select(
            selector, stream.task(task).train, synthetic,
            self._require_model(), k_real, objective, self.seed)

    def run(self, config: "ExperimentConfig") -> T.List["RunReport"]:
        from .experiment import run_experiment
        return run_experiment(config)

    def sweep(
            self, config: "ExperimentConfig", axis: str,
            values: T.Sequence[float],
            methods: T.Optional[T.Sequence[str]] = None,
            ) -> pd.DataFrame:
        from .experiment import sweep
        return sweep(config, axis, values, methods)

    def epsilon(
            self,
            rhos: T.Sequence[float] = (0.1, 0.25, 0.3),
            eps0s: T.Sequence[float] = (0.0, 0.3, 0.6),
            steps: int = 50,
            ) -> T.Tuple[pd.DataFrame, "Figure"]:
        """Traces of the forgetting-bound recursion over a (rho, eps0)
        grid and a panel figure, one panel per rho."""
        from .theory import epsilon_grid
        from .utils.plot import Plot2d
        grid = epsilon_grid(rhos, eps0s, steps)
        return grid, Plot2d.epsilon_panels(grid)

    def export_memory(self) -> T.Tuple[pd.DataFrame, "Figure"]:
        """Table of the loaded memory and a scatter of its first two
        features."""
        from .errors import StateError
        from .utils.plot import Plot2d
        if self.memory is None:
            raise StateError('No memory loaded, call load_memory first.')
        samples, synthetic = self.memory.as_samples()
        plt2d = Plot2d()
        plt2d.new_fig()
        plt2d.exemplars(samples.x, samples.y, np.asarray(synthetic))
        return self.memory.to_frame(), plt2d.fig
