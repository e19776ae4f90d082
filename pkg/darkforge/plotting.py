"""Figures for corpus colour distributions and split-cost curves."""

import numpy as np
from matplotlib.figure import Figure

__all__ = ['plot_channel_histograms', 'plot_increment_curve']

_COLOURS = {'R': 'tab:red', 'G': 'tab:green', 'B': 'tab:blue'}


def plot_channel_histograms(table, title=None, density=True):
    """
    Per-channel intensity distributions of a corpus.

    Parameters
    ----------
    table : pandas.DataFrame
        Columns ``bin``, ``R``, ``G``, ``B`` as produced by
        :func:`darkforge.image_stats.channel_histograms`
    title : str, optional
    density : bool, optional
        Normalise each channel to unit mass

    Returns
    -------
    fig : matplotlib.figure.Figure
    """
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    for channel, colour in _COLOURS.items():
        counts = table[channel].to_numpy(dtype=np.float64)
        if density and counts.sum() > 0:
            counts = counts / counts.sum()
        ax.plot(table['bin'], counts, color=colour, label=channel)
    ax.set_xlim(0, 255)
    ax.set_xlabel('intensity')
    ax.set_ylabel('fraction of pixels' if density else 'pixels')
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return fig


def plot_increment_curve(curve, title=None):
    """
    FLOPs and MACs increments F(g) and M(g) against the split count.

    Parameters
    ----------
    curve : pandas.DataFrame
        Output of :func:`darkforge.costmodel.increment_curve`

    Returns
    -------
    fig : matplotlib.figure.Figure
    """
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    g = curve['g'].astype(float)
    ax.plot(g, curve['F'].astype(float), 'o-', label='F(g)')
    ax2 = ax.twinx()
    ax2.plot(g, curve['M'].astype(float), 's--', color='tab:orange',
             label='M(g)')
    ax.set_xlabel('g')
    ax.set_ylabel('FLOPs increment')
    ax2.set_ylabel('MACs increment')
    ax.set_xscale('log', base=2)
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [line.get_label() for line in lines], loc='best')
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig
