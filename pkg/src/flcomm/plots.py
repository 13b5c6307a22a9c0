"""Deterministic figure rendering to SVG files.

Figures carry no timestamps (Date metadata stripped) and use a fixed hash
salt, so identical inputs produce byte-identical SVG output.
"""

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "flcomm"

import matplotlib.pyplot as plt  # noqa: E402


def line_band_figure(path, x, series: dict, xlabel: str, ylabel: str, title: str) -> None:
    """One line per labeled series, optional shaded min/max band.

    ``series`` maps label -> (mean, lo, hi); lo/hi may be None for a bare line.
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for label, (mean, lo, hi) in series.items():
        ax.plot(x, mean, label=label, linewidth=1.6)
        if lo is not None and hi is not None:
            ax.fill_between(x, lo, hi, alpha=0.18)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
