"""
Light-adaptive pupillary mechanism.

An RGB image is amplified by a dilation factor, converted to BT.601 luma and
thresholded into a binary photosensitive mask. The mask is max-pooled into a
stride-2 pyramid and every level is mapped to texture features by a
four-parameter gated normalisation shared across levels.
"""

import logging
import warnings
from dataclasses import dataclass, fields, replace

import numpy as np

from .image_stats import as_rgb, to_float, rgb_to_gray

__all__ = ['LAMBDA_RANGE', 'LapmConfig', 'LapmParams', 'amplify',
           'photomask', 'photosensitive_mask', 'max_pool_mask',
           'mask_pyramid', 'texture_features', 'texture_backward',
           'lapm_pyramid', 'fuse_texture', 'min_image_size']

logger = logging.getLogger(__name__)

LAMBDA_RANGE = (5.0, 12.0)


@dataclass(frozen=True)
class LapmConfig:
    """
    Non-trainable settings of the mechanism.

    Parameters
    ----------
    lam : float, optional
        Dilation (amplification) factor, typically within [5, 12]
    tau_photon : float, optional
        Luminance threshold on the unit-interval scale
    eps : float, optional
        Stabiliser in the gate denominator
    levels : int, optional
        Pyramid depth
    """

    lam: float = 8.0
    tau_photon: float = 0.02
    eps: float = 1e-8
    levels: int = 5

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0. < self.tau_photon < 1.:
            raise ValueError("tau_photon must lie in (0, 1)")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")

    def to_dict(self):
        return {'lambda': float(self.lam), 'tau_photon': float(self.tau_photon),
                'eps': float(self.eps), 'levels': int(self.levels)}


@dataclass(frozen=True)
class LapmParams:
    """
    The four trainable scalars: 1x1 kernel ``w``, its ``bias``, and the gate
    scale ``gamma`` and shift ``beta``.

    With ``bias = 0`` the gate is ``(gamma z + beta) / (1 + exp(-z) + eps)``
    with ``z = w * mask``.
    """

    w: float = 1.
    bias: float = 0.
    gamma: float = 1.
    beta: float = 0.

    @property
    def n_parameters(self):
        return len(fields(self))

    def parameters(self):
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def with_parameters(self, named):
        return replace(self, **{k: float(v) for k, v in named.items()})


def min_image_size(levels):
    """Smallest side length that still yields ``levels`` pyramid levels."""
    return 2 ** levels


def amplify(img, lam):
    """
    Multiply a unit-interval image by the dilation factor, without clipping.

    8-bit input is converted to floats first. Factors outside the usual
    range are accepted with a warning.

    Examples
    --------
    >>> amplify(np.full((1, 1, 3), 0.1), 8.)[0, 0]
    array([0.8, 0.8, 0.8])
    """
    img = as_rgb(img)
    if img.dtype == np.uint8:
        img = to_float(img)
    if not LAMBDA_RANGE[0] <= lam <= LAMBDA_RANGE[1]:
        warnings.warn("dilation factor {} lies outside the usual range "
                      "[{}, {}]".format(lam, *LAMBDA_RANGE))
    return lam * img


def photomask(gray, tau_photon):
    """
    Binary plane: 1 where ``gray > tau_photon`` (strict), 0 elsewhere.

    >>> photomask(np.array([[0.01, 0.02, 0.03]]), 0.02)
    array([[0., 0., 1.]])
    """
    return (np.asarray(gray, dtype=np.float64) > tau_photon).astype(
        np.float64)


def photosensitive_mask(img, cfg):
    """Full-resolution mask ``photomask(rgb_to_gray(amplify(img)))``."""
    return photomask(rgb_to_gray(amplify(img, cfg.lam)), cfg.tau_photon)


def max_pool_mask(mask):
    """2x2 stride-2 max pooling; an odd last row or column is dropped."""
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape[0] // 2, mask.shape[1] // 2
    if h < 1 or w < 1:
        raise ValueError("mask of shape {} is too small to pool".format(
            mask.shape))
    return mask[:2 * h, :2 * w].reshape(h, 2, w, 2).max(axis=(1, 3))


def mask_pyramid(mask, levels):
    """
    Stride-2 pyramid of a binary mask.

    Returns
    -------
    planes : list of numpy.ndarray
        ``levels`` planes at strides 2, 4, ..., 2**levels
    """
    mask = np.asarray(mask, dtype=np.float64)
    size = min_image_size(levels)
    if mask.shape[0] < size or mask.shape[1] < size:
        raise ValueError("{} levels need an image of at least {}x{}, got "
                         "{}x{}".format(levels, size, size, *mask.shape[:2]))
    planes = []
    for _ in range(levels):
        mask = max_pool_mask(mask)
        planes.append(mask)
    return planes


def _gate_terms(mask, p, eps):
    z = p.w * np.asarray(mask, dtype=np.float64) + p.bias
    e = np.exp(-z)
    return z, e, 1. + e + eps


def texture_features(mask, p, eps=1e-8):
    """
    Gated normalisation of a mask plane.

    Parameters
    ----------
    mask : numpy.ndarray
        Binary plane
    p : LapmParams
    eps : float, optional

    Returns
    -------
    features : numpy.ndarray
        ``(gamma z + beta) / (1 + exp(-z) + eps)`` with ``z = w mask + bias``

    Examples
    --------
    >>> round(float(texture_features(np.ones((1, 1)), LapmParams())[0, 0]), 6)
    0.731059
    """
    z, _, denom = _gate_terms(mask, p, eps)
    return (p.gamma * z + p.beta) / denom


def texture_backward(mask, p, grad_out, eps=1e-8):
    """
    Gradients of :func:`texture_features` with respect to the four
    parameters; the mask is a constant.

    Returns
    -------
    grads : dict
        ``w``, ``bias``, ``gamma`` and ``beta`` as floats
    """
    z, e, denom = _gate_terms(mask, p, eps)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != z.shape:
        raise ValueError("grad_out has shape {}, mask is {}".format(
            grad_out.shape, z.shape))
    numer = p.gamma * z + p.beta
    grad_z = grad_out * (p.gamma * denom + numer * e) / denom ** 2
    return {'w': float(np.sum(grad_z * mask)),
            'bias': float(np.sum(grad_z)),
            'gamma': float(np.sum(grad_out * z / denom)),
            'beta': float(np.sum(grad_out / denom))}


def lapm_pyramid(img, cfg=None, p=None, return_masks=False):
    """
    Run the full mechanism on one image.

    Parameters
    ----------
    img : numpy.ndarray
        (H, W, 3) image, 8-bit or unit-interval float
    cfg : LapmConfig, optional
    p : LapmParams, optional
        Shared by every level
    return_masks : bool, optional
        Also return the mask pyramid

    Returns
    -------
    features : list of numpy.ndarray
        One texture plane per level, halving in size
    masks : list of numpy.ndarray
        Only when ``return_masks`` is set

    Examples
    --------
    >>> planes = lapm_pyramid(np.full((64, 64, 3), 0.5))
    >>> [plane.shape[0] for plane in planes]
    [32, 16, 8, 4, 2]
    """
    cfg = LapmConfig() if cfg is None else cfg
    p = LapmParams() if p is None else p
    img = as_rgb(img)
    size = min_image_size(cfg.levels)
    if img.shape[0] < size or img.shape[1] < size:
        raise ValueError("{} levels need an image of at least {}x{}, got "
                         "{}x{}".format(cfg.levels, size, size,
                                        *img.shape[:2]))
    masks = mask_pyramid(photosensitive_mask(img, cfg), cfg.levels)
    features = [texture_features(m, p, cfg.eps) for m in masks]
    logger.debug("mask coverage per level: %s",
                 ', '.join('{:.3f}'.format(m.mean()) for m in masks))
    if return_masks:
        return features, masks
    return features


def fuse_texture(fmap, plane, mode='concat'):
    """
    Merge a texture plane into a backbone feature map.

    Parameters
    ----------
    fmap : numpy.ndarray
        (N, C, H, W) features
    plane : numpy.ndarray
        (H, W) or (N, 1, H, W) texture plane
    mode : str, optional
        ``'concat'`` appends the plane as an extra channel; ``'add'`` adds
        it to every channel

    Returns
    -------
    fused : numpy.ndarray
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    plane = np.asarray(plane, dtype=np.float64)
    if fmap.ndim != 4:
        raise ValueError("feature map must be (N, C, H, W)")
    if plane.ndim == 2:
        plane = np.broadcast_to(plane, (fmap.shape[0], 1) + plane.shape)
    if plane.ndim != 4 or plane.shape[1] != 1:
        raise ValueError("texture plane must be (H, W) or (N, 1, H, W)")
    if plane.shape[2:] != fmap.shape[2:] or plane.shape[0] != fmap.shape[0]:
        raise ValueError("texture plane {} does not match feature map "
                         "{}".format(plane.shape, fmap.shape))
    if mode == 'concat':
        return np.concatenate([fmap, plane], axis=1)
    if mode == 'add':
        return fmap + plane
    raise ValueError("mode must be 'concat' or 'add'")
