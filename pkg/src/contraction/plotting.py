"""Static SVG figures for CLI reports.  Presentation only; CSV files carry the data."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_decay", "plot_profile", "plot_series"]

STYLE = {
    "svg.hashsalt": "contraction",
    "figure.figsize": (6.0, 3.8),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_decay(series, fit, path, certificate_rate=None, title=""):
    """Log of the norm against time with the fitted line and, if given, the certified slope."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        d2 = np.maximum(series.d2, np.finfo(float).tiny)
        ax.plot(series.times, 0.5 * np.log(d2), ".", ms=3, label="measured")
        t = np.array(fit.window if fit.window is not None else (series.times[0], series.times[-1]))
        ax.plot(t, fit.intercept - fit.rate * t, "-", label=f"fit, rate {fit.rate:.4g}")
        if certificate_rate is not None:
            y0 = 0.5 * np.log(d2[0])
            ax.plot(t, y0 - certificate_rate * (t - series.times[0]), "--",
                    label=f"certificate, rate {certificate_rate:.4g}")
        ax.set_xlabel("t")
        ax.set_ylabel("log norm of difference")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_profile(grid, values, path, labels=None, title=""):
    """Final state: line plot in 1-D, one image per component in 2-D."""
    values = np.atleast_2d(values)
    n = values.shape[0]
    labels = labels or [f"phi{i}" for i in range(n)]
    with plt.rc_context(STYLE):
        if grid.dims == 1:
            fig, ax = plt.subplots()
            for i in range(n):
                ax.plot(grid.coords[0], values[i], label=labels[i])
            ax.set_xlabel("x")
            ax.legend()
            ax.set_title(title)
        else:
            fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
            extent = (grid.origin[1], grid.origin[1] + grid.lengths[1],
                      grid.origin[0] + grid.lengths[0], grid.origin[0])
            for i, ax in enumerate(axes[0]):
                im = ax.imshow(grid.reshape(values[i]), extent=extent, aspect="auto")
                ax.set_title(labels[i])
                ax.set_xlabel("y")
                ax.set_ylabel("x")
                fig.colorbar(im, ax=ax, shrink=0.8)
            fig.suptitle(title)
        return _save(fig, path)


def plot_series(times, columns, labels, path, ylabel="", logy=False, title=""):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for col, lab in zip(np.atleast_2d(columns), labels):
            ax.plot(times, col, label=lab)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)
