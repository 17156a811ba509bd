"""Static SVG renderings of the demo figure data."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_1d(path, x, mean, lower, upper, x_train=None, y_train=None, title=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if x_train is not None:
        ax.scatter(x_train, y_train, s=3, color="0.6", label="observations")
    ax.plot(x, mean, color="C0", label="mean")
    ax.fill_between(x, lower, upper, color="C0", alpha=0.25, label="95% interval")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_2d(path, g1, g2, std, X_train, segment=None, lam=None, seg_mean=None, seg_std=None):
    """Std heat map with training inputs; optional mean +- 2 std trace along the segment."""
    rows = 2 if lam is not None else 1
    fig, axes = plt.subplots(rows, 1, figsize=(5, 4 * rows), squeeze=False)
    ax = axes[0, 0]
    mesh = ax.pcolormesh(g1, g2, std, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="std")
    ax.scatter(X_train[:, 0], X_train[:, 1], marker="x", s=8, color="red")
    if segment is not None:
        ax.plot(segment[:, 0], segment[:, 1], "w--", lw=1)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if lam is not None:
        ax = axes[1, 0]
        ax.plot(lam, seg_mean, color="C0")
        ax.fill_between(lam, seg_mean - 2 * seg_std, seg_mean + 2 * seg_std, color="C0", alpha=0.25)
        ax.axvline(-1.0, color="0.5", lw=0.5)
        ax.axvline(1.0, color="0.5", lw=0.5)
        ax.set_xlabel("lambda")
        ax.set_ylabel("f")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
