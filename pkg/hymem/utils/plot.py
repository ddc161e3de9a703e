import typing as T
from pathlib import Path

import numpy as np
import pandas as pd
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.axes import Axes  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from ..theory import fixed_points  # noqa: E402


class Plot2d(object):
    def __init__(self):
        self.default_figsize = (6, 4)
        self.default_marker = "o"
        self.default_marker_size = 20
        self.synthetic_marker = "*"
        self.real_marker = "o"

    def new_fig(self, **kwargs):
        """ Create a new figure and axes.

        Args:
            **kwargs: keyword arguments passed to plt.subplots
        """
        self.fig: Figure
        self.ax: Axes
        kwargs.setdefault("figsize", self.default_figsize)
        self.fig, self.ax = plt.subplots(**kwargs)
        return self.fig

    def aa_vs_task(
            self, curves: T.Mapping[str, T.Sequence[float]],
            ax: T.Optional[Axes] = None, **kwargs):
        """ Plot AA after every task, one line per method.

        Args:
            curves: method name -> AA per task
            ax: axes to plot on
            **kwargs: keyword arguments passed to ax.plot
        """
        if ax is None:
            ax = self.ax
        kwargs.setdefault("marker", self.default_marker)
        for name, values in curves.items():
            ax.plot(np.arange(1, len(values) + 1), values, label=name, **kwargs)
        ax.set_xlabel("task")
        ax.set_ylabel("AA (%)")
        ax.legend()

    def metric_vs_axis(
            self, table: pd.DataFrame, axis: str,
            metric: str = "aia", ax: T.Optional[Axes] = None, **kwargs):
        """ Plot the seed-averaged metric against a sweep axis.

        Args:
            table: sweep table with columns value, method, <metric>
            axis: name of the swept quantity
            metric: column to plot
            ax: axes to plot on
        """
        if ax is None:
            ax = self.ax
        kwargs.setdefault("marker", self.default_marker)
        mean = table.groupby(["method", "value"])[metric].mean()
        for method in sorted(table["method"].unique()):
            series = mean.loc[method].sort_index()
            ax.plot(series.index, series.values, label=method, **kwargs)
        ax.set_xlabel(axis)
        ax.set_ylabel(metric.upper())
        ax.legend()

    def exemplars(
            self, x: np.ndarray, y: np.ndarray, synthetic: np.ndarray,
            ax: T.Optional[Axes] = None, **kwargs):
        """ Scatter the first two features of stored exemplars.

        Args:
            x: features, 2d array (n, d)
            y: labels, (n,)
            synthetic: synthetic flags, (n,)
            ax: axes to plot on
        """
        if ax is None:
            ax = self.ax
        kwargs.setdefault("s", self.default_marker_size)
        ys = x[:, 1] if x.shape[1] > 1 else np.zeros(len(x))
        for flag, marker, label in (
                (False, self.real_marker, "real"),
                (True, self.synthetic_marker, "synthetic")):
            sel = synthetic == flag
            ax.scatter(
                x[sel, 0], ys[sel], c=y[sel], marker=marker,
                label=label, cmap="tab10", **kwargs)
        ax.legend()

    @classmethod
    def epsilon_panels(
            cls, grid: pd.DataFrame,
            fig_size: T.Tuple[int, int] = (4, 3),
            ) -> "Figure":
        """One panel per rho with a trace per eps0 and the fixed points
        as dashed lines."""
        rhos = sorted(grid["rho"].unique())
        fig, axes = plt.subplots(
            1, len(rhos), figsize=(fig_size[0] * len(rhos), fig_size[1]),
            squeeze=False)
        for ax, rho in zip(axes[0], rhos):
            sub = grid[grid["rho"] == rho]
            for eps0, tr in sub.groupby("eps0"):
                ax.plot(tr["step"], tr["epsilon"], label=f"eps0={eps0:g}")
            fp = fixed_points(rho)
            if fp is not None:
                for v in sorted(set(fp)):
                    ax.axhline(v, linestyle="--", color="gray")
            ax.set_ylim(0, 1)
            ax.set_title(f"rho={rho:g}")
            ax.set_xlabel("step")
            ax.legend()
        return fig


def save_svg(fig: Figure, path: T.Union[str, Path]):
    """Save without timestamps or random ids, so reruns give identical
    files."""
    with matplotlib.rc_context({"svg.hashsalt": "hymem"}):
        fig.savefig(str(path), format="svg", metadata={"Date": None})
    plt.close(fig)
