"""Figure rendering for evaluation reports.

Figures are written next to the CSV outputs so a report directory is
self-contained: ENU error curves per method and the 3D-error CDF
comparison.  matplotlib is imported lazily with the Agg backend so the
CLI works headless.
"""

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    return plt


def render_error_series(series_by_method, path):
    """Three stacked panels (E/N/U error vs time), one line per method."""
    plt = _plt()
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(9, 7))
    labels = ("East error [m]", "North error [m]", "Up error [m]")
    for ax, label, comp in zip(axes, labels, ("east", "north", "up")):
        for method, series in series_by_method.items():
            values = getattr(series, comp).copy()
            values[~series.valid] = np.nan
            ax.plot(series.t, values, label=method, linewidth=0.9)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_cdf(reports, path):
    """Empirical CDF of 3D positioning errors, one curve per method."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 5))
    for report in reports:
        ax.plot(report.cdf_values, report.cdf_quantiles, label=report.method)
    ax.set_xlabel("3D error [m]")
    ax.set_ylabel("cumulative probability")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training(report, path):
    """Loss and validation RMSE traces over training epochs."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    epochs = np.arange(len(report.mean_loss))
    ax1.plot(epochs, report.mean_loss, label="mean mini-batch loss")
    ax1.set_ylabel("loss")
    ax1.grid(True, alpha=0.3)
    ax1.legend(fontsize=8)
    ax2.plot(epochs, report.val_rmse_3d, label="validation 3D RMSE [m]",
             color="tab:orange")
    if report.best_epoch >= 0:
        ax2.axvline(report.best_epoch, color="tab:green", linestyle="--",
                    linewidth=0.8, label=f"best epoch {report.best_epoch}")
    ax2.set_ylabel("RMSE [m]")
    ax2.set_xlabel("training epoch")
    ax2.grid(True, alpha=0.3)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
