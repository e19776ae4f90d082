"""
Illumination degradation transfer.

A well-lit image is mapped to a low-light counterpart in three steps:
target statistics are drawn from truncated normals fitted to a low-light
corpus summary, each channel is mapped affinely onto the sampled mean and
standard deviation, and pixels whose colour proportions drift too far are
restored to their original proportions.
"""

import copy
import logging
from dataclasses import dataclass, fields

import numpy as np
import yaml
from scipy.stats import truncnorm

from .errors import DataError
from .image_stats import CHANNELS, as_rgb, channel_mean_std

__all__ = ['TruncNormParams', 'TargetSample', 'DegradeConfig',
           'DegradeResult', 'target_distributions', 'truncnorm_sample',
           'sample_targets', 'linear_transform', 'color_ratios',
           'consistency_mask', 'corrected_values', 'apply_correction',
           'stream_seed', 'degrade_image', 'passthrough_annotations']

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class TruncNormParams:
    """
    A normal N(loc, scale**2) restricted to [lower, upper].

    ``loc`` and ``scale`` are the corpus median and spread; the standardised
    bounds are ``a = (lower - loc) / scale`` and ``b = (upper - loc) / scale``.
    """

    loc: float
    scale: float
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError("truncation bounds reversed: {} > {}".format(
                self.lower, self.upper))
        if self.scale < 0:
            raise ValueError("scale must be non-negative")
        if not self.lower <= self.loc <= self.upper:
            raise ValueError("loc {} outside [{}, {}]".format(
                self.loc, self.lower, self.upper))

    @property
    def degenerate(self):
        return self.scale < 1e-12 or self.lower == self.upper

    @property
    def a(self):
        return (self.lower - self.loc) / self.scale

    @property
    def b(self):
        return (self.upper - self.loc) / self.scale


@dataclass(frozen=True)
class TargetSample:
    """Sampled target mean and standard deviation for R, G and B."""

    target_mean: tuple
    target_std: tuple

    def to_dict(self):
        return {'target_mean': dict(zip(CHANNELS, map(float,
                                                      self.target_mean))),
                'target_std': dict(zip(CHANNELS, map(float,
                                                     self.target_std)))}


@dataclass(frozen=True)
class DegradeConfig:
    """
    Settings of the degradation engine.

    Parameters
    ----------
    tau_color : float, optional
        Colour consistency threshold on the ratio drift, in (0, 1)
    epsilon : float, optional
        Guard added to the per-pixel channel sum
    seed : int, optional
        Global seed, combined with each image key
    sigma_floor : float, optional
        Channels whose std is below this (8-bit units) are treated as
        constant
    """

    tau_color: float = 0.5
    epsilon: float = 1e-8
    seed: int = 0
    sigma_floor: float = 1e-6

    def __post_init__(self):
        if not 0. < self.tau_color < 1.:
            raise ValueError("tau_color must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.sigma_floor < 0:
            raise ValueError("sigma_floor must be non-negative")
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_file(cls, path, **overrides):
        """
        Load a flat YAML key/value file; every key is optional.

        Keyword overrides that are not None replace the file's values.
        """
        try:
            with open(path, 'r', encoding='utf-8') as f:
                doc = yaml.safe_load(f) or {}
        except OSError as exc:
            raise DataError("cannot read config {}: {}".format(path, exc))
        except yaml.YAMLError as exc:
            raise DataError("config {} is not valid YAML: {}".format(
                path, exc))
        if not isinstance(doc, dict):
            raise DataError("config {} must be a flat key/value file".format(
                path))
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise DataError("unknown config keys in {}: {}".format(
                path, ', '.join(unknown)))
        doc.update({k: v for k, v in overrides.items() if v is not None})
        try:
            values = {k: (int(v) if k == 'seed' else float(v))
                      for k, v in doc.items()}
            return cls(**values)
        except (TypeError, ValueError) as exc:
            raise DataError("invalid config {}: {}".format(path, exc))


@dataclass
class DegradeResult:
    """Intermediate products of one degradation, for diagnostics."""

    original_stats: tuple
    targets: TargetSample
    adjusted: np.ndarray
    ratios_orig: np.ndarray
    ratios_adj: np.ndarray
    mask: np.ndarray
    corrected: np.ndarray
    image: np.ndarray

    @property
    def corrected_fraction(self):
        return float(self.mask.mean())


def target_distributions(summary):
    """
    Truncated normal parameters for every channel of a corpus summary.

    Returns
    -------
    dists : dict
        channel -> (mean distribution, std distribution)
    """
    dists = {}
    for channel in CHANNELS:
        s = summary[channel]
        dists[channel] = (
            TruncNormParams(s.mean_median, s.mean_spread, s.mean_min,
                            s.mean_max),
            TruncNormParams(s.std_median, s.std_spread, s.std_min,
                            s.std_max))
    return dists


def truncnorm_sample(p, rng, size=None):
    """
    Draw from a truncated normal by inverting its CDF.

    Parameters
    ----------
    p : TruncNormParams
        Distribution
    rng : numpy.random.Generator
        Source of uniforms
    size : int, optional
        Number of draws; a single float is returned when omitted

    Returns
    -------
    x : float or numpy.ndarray
        Draws in [p.lower, p.upper]; ``p.loc`` when the distribution is
        degenerate

    Examples
    --------
    >>> truncnorm_sample(TruncNormParams(5., 0., 1., 9.),
    ...                  np.random.default_rng(0))
    5.0
    """
    if p.degenerate:
        return p.loc if size is None else np.full(size, float(p.loc))
    u = rng.random(size)
    x = truncnorm.ppf(u, p.a, p.b, loc=p.loc, scale=p.scale)
    x = np.clip(x, p.lower, p.upper)
    return float(x) if size is None else x


def sample_targets(summary, rng):
    """
    Draw one target mean and std per channel from a corpus summary.

    Draws are made in R, G, B order, the mean before the std.
    """
    dists = target_distributions(summary)
    means, stds = [], []
    for channel in CHANNELS:
        mean_dist, std_dist = dists[channel]
        means.append(truncnorm_sample(mean_dist, rng))
        stds.append(truncnorm_sample(std_dist, rng))
    return TargetSample(tuple(means), tuple(stds))


def linear_transform(img, orig, target, cfg):
    """
    Map each channel onto its target mean and standard deviation.

    ``I_adj = clip((sigma_t / sigma_o) (I - mu_o) + mu_t, 0, 255)``, rounded
    to 8 bits. Channels with ``sigma_o < cfg.sigma_floor`` are constant and
    become ``clip(mu_t)`` everywhere.

    Parameters
    ----------
    img : numpy.ndarray
        8-bit (H, W, 3) image
    orig : tuple of ChannelStats
        Statistics of ``img``
    target : TargetSample
        Sampled targets
    cfg : DegradeConfig
        Engine settings

    Returns
    -------
    adjusted : numpy.ndarray
        8-bit (H, W, 3) image

    Examples
    --------
    >>> from darkforge.image_stats import ChannelStats
    >>> img = np.array([[[200, 200, 200], [0, 0, 0], [255, 255, 255]]],
    ...                dtype=np.uint8)
    >>> orig = (ChannelStats(150., 50.),) * 3
    >>> target = TargetSample((30.,) * 3, (10.,) * 3)
    >>> linear_transform(img, orig, target, DegradeConfig())[0, :, 0]
    array([40,  0, 51], dtype=uint8)
    """
    img = as_rgb(img)
    if img.dtype != np.uint8:
        raise ValueError("linear_transform works on 8-bit images")
    values = img.astype(np.float64)
    out = np.empty_like(values)
    for c in range(3):
        mu_t, sigma_t = target.target_mean[c], target.target_std[c]
        if orig[c].std < cfg.sigma_floor:
            out[..., c] = mu_t
        else:
            out[..., c] = (sigma_t / orig[c].std) * (values[..., c]
                                                     - orig[c].mean) + mu_t
    return np.rint(np.clip(out, 0., 255.)).astype(np.uint8)


def color_ratios(img, eps=1e-8):
    """
    Per-pixel channel proportions ``I^c / (sum_k I^k + eps)``.

    Examples
    --------
    >>> color_ratios(np.array([[[50, 100, 50]]], dtype=np.uint8)).round(6)
    array([[[0.25, 0.5 , 0.25]]])
    """
    values = np.asarray(img, dtype=np.float64)
    return values / (values.sum(axis=2, keepdims=True) + eps)


def consistency_mask(ratios_orig, ratios_adj, tau_color):
    """
    Flag pixels whose colour proportions drifted by more than ``tau_color``.

    Returns
    -------
    mask : numpy.ndarray
        uint8 (H, W) plane, 1 where ``max_c |R_o - R_adj| > tau_color``
    """
    ratios_orig = np.asarray(ratios_orig)
    ratios_adj = np.asarray(ratios_adj)
    if ratios_orig.shape != ratios_adj.shape:
        raise ValueError("ratio fields differ in shape: {} vs {}".format(
            ratios_orig.shape, ratios_adj.shape))
    drift = np.abs(ratios_orig - ratios_adj).max(axis=2)
    return (drift > tau_color).astype(np.uint8)


def corrected_values(adjusted, ratios_orig, mask):
    """
    Colour-corrected intensities before clipping and rounding.

    Masked pixels take ``R_o(i, j, c) * sum_k I_adj^k(i, j)``; the others keep
    their adjusted values.
    """
    adjusted = np.asarray(adjusted, dtype=np.float64)
    ratios_orig = np.asarray(ratios_orig, dtype=np.float64)
    mask = np.asarray(mask)
    if adjusted.shape != ratios_orig.shape or mask.shape != adjusted.shape[:2]:
        raise ValueError("image, ratio field and mask shapes disagree")
    total = adjusted.sum(axis=2, keepdims=True)
    return np.where(mask[..., None] == 1, ratios_orig * total, adjusted)


def apply_correction(adjusted, ratios_orig, mask):
    """
    Restore the original colour proportions on masked pixels.

    The corrected values are clipped to [0, 255] and rounded to 8 bits.

    Examples
    --------
    >>> adj = np.array([[[10, 40, 10]]], dtype=np.uint8)
    >>> ratios = np.array([[[0.25, 0.5, 0.25]]])
    >>> apply_correction(adj, ratios, np.ones((1, 1), dtype=np.uint8))
    array([[[15, 30, 15]]], dtype=uint8)
    """
    values = corrected_values(adjusted, ratios_orig, mask)
    return np.rint(np.clip(values, 0., 255.)).astype(np.uint8)


def _fnv1a64(text):
    h = 0xcbf29ce484222325
    for byte in text.encode('utf-8'):
        h = ((h ^ byte) * 0x100000001b3) & _MASK64
    return h


def _splitmix64(x):
    x = (x + 0x9e3779b97f4a7c15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xbf58476d1ce4e5b9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94d049bb133111eb) & _MASK64
    return x ^ (x >> 31)


def stream_seed(seed, image_key):
    """
    64-bit seed of the random stream for one image.

    ``splitmix64(seed XOR fnv1a64(image_key))``, so each image gets its own
    stream whatever order or worker it is processed in.

    Examples
    --------
    >>> stream_seed(7, 'a.png') == stream_seed(7, 'a.png')
    True
    >>> stream_seed(7, 'a.png') == stream_seed(7, 'b.png')
    False
    """
    return _splitmix64((int(seed) & _MASK64) ^ _fnv1a64(image_key))


def degrade_image(img, summary, cfg, image_key, return_details=False):
    """
    Degrade one well-lit image towards a low-light corpus profile.

    Parameters
    ----------
    img : numpy.ndarray
        8-bit (H, W, 3) image
    summary : ChannelStatsSummary
        Low-light corpus profile
    cfg : DegradeConfig
        Engine settings
    image_key : str
        Stable identifier of the image (its relative path in a corpus)
    return_details : bool, optional
        If True return a :class:`DegradeResult` instead of the image

    Returns
    -------
    out : numpy.ndarray or DegradeResult
        8-bit degraded image, or all intermediate products
    """
    img = as_rgb(img)
    if img.dtype != np.uint8:
        raise ValueError("degrade_image works on 8-bit images")
    rng = np.random.default_rng(stream_seed(cfg.seed, image_key))
    orig = channel_mean_std(img)
    targets = sample_targets(summary, rng)
    adjusted = linear_transform(img, orig, targets, cfg)
    ratios_orig = color_ratios(img, cfg.epsilon)
    ratios_adj = color_ratios(adjusted, cfg.epsilon)
    mask = consistency_mask(ratios_orig, ratios_adj, cfg.tau_color)
    corrected = corrected_values(adjusted, ratios_orig, mask)
    out = np.rint(np.clip(corrected, 0., 255.)).astype(np.uint8)
    logger.debug("%s: targets %s, %.4f of pixels colour-corrected",
                 image_key, targets.target_mean, mask.mean())
    if return_details:
        return DegradeResult(orig, targets, adjusted, ratios_orig,
                             ratios_adj, mask, corrected, out)
    return out


def passthrough_annotations(annotation_doc, filename_map):
    """
    Reuse COCO annotations for the degraded corpus.

    Degradation is pixel-wise, so boxes, polygons and categories carry over
    unchanged; only the ``file_name`` of each image record is remapped.

    Parameters
    ----------
    annotation_doc : dict
        COCO document with ``images``, ``annotations`` and ``categories``
    filename_map : dict
        Input file name -> output file name

    Returns
    -------
    doc : dict
        A new document; the input is not modified

    Examples
    --------
    >>> doc = {'images': [{'id': 1, 'file_name': 'a.jpg'}],
    ...        'annotations': [{'image_id': 1, 'bbox': [1, 2, 3, 4]}],
    ...        'categories': []}
    >>> passthrough_annotations(doc, {'a.jpg': 'a_dark.png'})['images']
    [{'id': 1, 'file_name': 'a_dark.png'}]
    """
    if not isinstance(annotation_doc, dict) or 'images' not in annotation_doc:
        raise DataError("annotation document has no 'images' array")
    doc = copy.deepcopy(annotation_doc)
    missing = sorted({str(image.get('file_name')) for image in doc['images']
                      if image.get('file_name') not in filename_map})
    if missing:
        raise DataError("annotations reference images not in the corpus: "
                        "{}".format(', '.join(missing)))
    for image in doc['images']:
        image['file_name'] = filename_map[image['file_name']]
    return doc
