"""Per-channel image statistics and corpus summaries."""

from dataclasses import dataclass, fields

import numpy as np
import pandas as pd

from .errors import DataError

__all__ = ['CHANNELS', 'SCHEMA_VERSION', 'BT601', 'ChannelStats',
           'ChannelSummary', 'ChannelStatsSummary', 'as_rgb', 'to_float',
           'to_uint8', 'channel_mean_std', 'rgb_to_gray', 'summarize_corpus',
           'stats_table', 'summary_from_table', 'channel_histogram',
           'channel_histograms', 'compare_summaries']

CHANNELS = ('R', 'G', 'B')
SCHEMA_VERSION = 1
BT601 = np.array([0.299, 0.587, 0.114])


def as_rgb(img):
    """
    Validate an RGB raster and return it as an array.

    uint8 arrays are the 8-bit representation, float arrays the
    unit-interval one; the dtype is the representation tag.

    Parameters
    ----------
    img : arraylike
        (H, W, 3) image

    Returns
    -------
    img : numpy.ndarray
        uint8 or float64 array of shape (H, W, 3)
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image, got shape {}".format(
            img.shape))
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("image is empty")
    if img.dtype == np.uint8:
        return img
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError("images must be uint8 or float, got {}".format(
            img.dtype))
    img = img.astype(np.float64, copy=False)
    if not np.all(np.isfinite(img)) or img.min() < 0. or img.max() > 1.:
        raise ValueError("float images must lie in [0, 1]")
    return img


def to_float(img):
    """
    Convert an 8-bit image to unit-interval floats (u8 / 255).

    Examples
    --------
    >>> to_float(np.full((1, 1, 3), 255, dtype=np.uint8))[0, 0]
    array([1., 1., 1.])
    """
    img = as_rgb(img)
    if img.dtype != np.uint8:
        raise ValueError("to_float expects an 8-bit image")
    return img.astype(np.float64) / 255.


def to_uint8(img):
    """Convert a unit-interval image to 8 bits: round(x * 255), clipped."""
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint(img * 255.), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class ChannelStats:
    """Mean and population standard deviation of one image channel."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be non-negative")


@dataclass(frozen=True)
class ChannelSummary:
    """Corpus statistics of the per-image means and stds of one channel."""

    mean_median: float
    mean_spread: float
    mean_min: float
    mean_max: float
    std_median: float
    std_spread: float
    std_min: float
    std_max: float

    def __post_init__(self):
        for family in ('mean', 'std'):
            lo = getattr(self, family + '_min')
            mid = getattr(self, family + '_median')
            hi = getattr(self, family + '_max')
            if not lo <= mid <= hi:
                raise ValueError(
                    "{0}_min <= {0}_median <= {0}_max violated".format(family))
            if getattr(self, family + '_spread') < 0:
                raise ValueError("{}_spread must be non-negative".format(
                    family))

    def to_dict(self):
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class ChannelStatsSummary:
    """
    Per-channel corpus summary driving target sampling.

    Serialises to JSON with top-level keys ``R``, ``G``, ``B`` (one
    :class:`ChannelSummary` record each), ``n_images`` and
    ``schema_version``.
    """

    R: ChannelSummary
    G: ChannelSummary
    B: ChannelSummary
    n_images: int

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("a summary needs at least one image")

    def __getitem__(self, channel):
        if channel not in CHANNELS:
            raise KeyError(channel)
        return getattr(self, channel)

    def channels(self):
        return [self[c] for c in CHANNELS]

    def to_dict(self):
        doc = {c: self[c].to_dict() for c in CHANNELS}
        doc['n_images'] = int(self.n_images)
        doc['schema_version'] = SCHEMA_VERSION
        return doc

    @classmethod
    def from_dict(cls, doc):
        try:
            names = [f.name for f in fields(ChannelSummary)]
            per_channel = {c: ChannelSummary(**{k: float(doc[c][k])
                                                for k in names})
                           for c in CHANNELS}
            return cls(n_images=int(doc['n_images']), **per_channel)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError("invalid stats summary: {}".format(exc))


def channel_mean_std(img):
    """
    Mean and population standard deviation of each RGB channel.

    Parameters
    ----------
    img : arraylike
        (H, W, 3) image, 8-bit or float

    Returns
    -------
    stats : tuple of ChannelStats
        One record per channel in R, G, B order

    Examples
    --------
    >>> img = np.zeros((1, 2, 3), dtype=np.uint8)
    >>> img[0, 1, 0] = 200
    >>> channel_mean_std(img)[0]
    ChannelStats(mean=100.0, std=100.0)
    """
    img = as_rgb(img)
    values = img.reshape(-1, 3).astype(np.float64)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    return tuple(ChannelStats(float(m), float(s)) for m, s in zip(mean, std))


def rgb_to_gray(img):
    """
    ITU-R BT.601 luma of a float image.

    Values above 1 are allowed so that amplified images can be converted.

    Parameters
    ----------
    img : numpy.ndarray
        Float array of shape (H, W, 3)

    Returns
    -------
    gray : numpy.ndarray
        (H, W) plane, 0.299 R + 0.587 G + 0.114 B

    Examples
    --------
    >>> rgb_to_gray(np.array([[[1., 0., 0.]]]))
    array([[0.299]])
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image, got shape {}".format(
            img.shape))
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError("rgb_to_gray works on float images; convert first")
    img = img.astype(np.float64, copy=False)
    return (BT601[0] * img[..., 0] + BT601[1] * img[..., 1]
            + BT601[2] * img[..., 2])


def _family_summary(values):
    # sorting first makes the result independent of image order
    values = np.sort(np.asarray(values, dtype=np.float64))
    return (float(np.median(values)), float(values.std()),
            float(values[0]), float(values[-1]))


def summarize_corpus(stats):
    """
    Summarise per-image channel statistics over a corpus.

    Parameters
    ----------
    stats : sequence
        One ``(ChannelStats, ChannelStats, ChannelStats)`` triple per image

    Returns
    -------
    summary : ChannelStatsSummary
        Median, population std, min and max of the per-image means and of
        the per-image stds, per channel

    Examples
    --------
    >>> per_image = [(ChannelStats(m, 1.),) * 3 for m in (10., 20., 30.)]
    >>> r = summarize_corpus(per_image).R
    >>> r.mean_median, r.mean_min, r.mean_max, round(r.mean_spread, 4)
    (20.0, 10.0, 30.0, 8.165)
    """
    stats = list(stats)
    if not stats:
        raise ValueError("cannot summarise an empty corpus")
    per_channel = {}
    for ci, channel in enumerate(CHANNELS):
        means = [s[ci].mean for s in stats]
        stds = [s[ci].std for s in stats]
        m_med, m_spread, m_min, m_max = _family_summary(means)
        s_med, s_spread, s_min, s_max = _family_summary(stds)
        per_channel[channel] = ChannelSummary(
            mean_median=m_med, mean_spread=m_spread, mean_min=m_min,
            mean_max=m_max, std_median=s_med, std_spread=s_spread,
            std_min=s_min, std_max=s_max)
    return ChannelStatsSummary(n_images=len(stats), **per_channel)


def stats_table(keys, stats):
    """
    Tabulate per-image statistics.

    Returns
    -------
    table : pandas.DataFrame
        Columns ``file``, ``mean_R``, ``mean_G``, ``mean_B``, ``std_R``,
        ``std_G``, ``std_B``
    """
    rows = []
    for key, triple in zip(keys, stats):
        row = {'file': key}
        for channel, s in zip(CHANNELS, triple):
            row['mean_' + channel] = s.mean
            row['std_' + channel] = s.std
        rows.append(row)
    columns = (['file'] + ['mean_' + c for c in CHANNELS]
               + ['std_' + c for c in CHANNELS])
    return pd.DataFrame(rows, columns=columns)


def summary_from_table(table):
    """Rebuild a summary from a table produced by :func:`stats_table`."""
    stats = [tuple(ChannelStats(row['mean_' + c], row['std_' + c])
                   for c in CHANNELS)
             for _, row in table.iterrows()]
    return summarize_corpus(stats)


def channel_histogram(img):
    """256-bin counts per channel of an 8-bit image, shape (256, 3)."""
    img = as_rgb(img)
    if img.dtype != np.uint8:
        raise ValueError("histograms are taken on 8-bit images")
    flat = img.reshape(-1, 3)
    return np.stack([np.bincount(flat[:, c], minlength=256)
                     for c in range(3)], axis=1)


def channel_histograms(counts):
    """
    Sum per-image histograms into a corpus histogram table.

    Parameters
    ----------
    counts : iterable of numpy.ndarray
        (256, 3) arrays from :func:`channel_histogram`

    Returns
    -------
    table : pandas.DataFrame
        Columns ``bin``, ``R``, ``G``, ``B``
    """
    total = np.zeros((256, 3), dtype=np.int64)
    for c in counts:
        total += c
    table = pd.DataFrame(total, columns=list(CHANNELS))
    table.insert(0, 'bin', np.arange(256))
    return table


def compare_summaries(source, target):
    """
    Per-channel shift of the median statistics from one summary to another.

    Returns
    -------
    table : pandas.DataFrame
        Indexed by channel, with the source and target medians and their
        differences (target - source)
    """
    rows = []
    for channel in CHANNELS:
        s, t = source[channel], target[channel]
        rows.append({'channel': channel,
                     'source_mean_median': s.mean_median,
                     'target_mean_median': t.mean_median,
                     'mean_shift': t.mean_median - s.mean_median,
                     'source_std_median': s.std_median,
                     'target_std_median': t.std_median,
                     'std_shift': t.std_median - s.std_median})
    return pd.DataFrame(rows).set_index('channel')
