"""
Scaled nearest-neighbour upsampling with a learned sigmoid gate.

``u = alpha * upsample(x, s)`` is modulated per pixel and channel by
``sigmoid(W * u + b)`` where ``W`` is a 1x1 convolution. ``alpha`` defaults
to ``1 / s**2`` so the pre-gate term carries the same total activation as the
input.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensorkit import (Conv2dParams, as_tensor, conv2d_forward,
                        conv2d_backward, hadamard, sigmoid,
                        nearest_upsample, nearest_upsample_backward)

__all__ = ['SnirParams', 'snir_forward', 'snir_backward',
           'sni_baseline_forward']


@dataclass
class SnirParams:
    """
    Gate weights and upsampling geometry.

    Parameters
    ----------
    weight : numpy.ndarray
        (C, C, 1, 1) gate kernel; input and output channels must agree
    bias : numpy.ndarray
        (C,) gate bias
    scale : int
        Upsampling factor s >= 1
    alpha : float, optional
        Resolution compensation; ``1 / s**2`` when omitted
    """

    weight: np.ndarray
    bias: np.ndarray
    scale: int = 2
    alpha: Optional[float] = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if (self.weight.ndim != 4 or self.weight.shape[2:] != (1, 1)
                or self.weight.shape[0] != self.weight.shape[1]):
            raise ValueError("gate weight must be (C, C, 1, 1), got {}".format(
                self.weight.shape))
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("gate bias must have shape (C,)")
        if int(self.scale) != self.scale or self.scale < 1:
            raise ValueError("scale must be a positive integer")
        self.scale = int(self.scale)
        if self.alpha is None:
            self.alpha = 1. / self.scale ** 2
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def channels(self):
        return self.weight.shape[0]

    @property
    def gate(self):
        return Conv2dParams(self.weight, self.bias)

    @classmethod
    def initialise(cls, channels, scale=2, seed=0, alpha=None):
        """He-initialised 1x1 gate with zero bias."""
        rng = np.random.default_rng(seed)
        weight = (rng.standard_normal((channels, channels, 1, 1))
                  * np.sqrt(2. / channels))
        return cls(weight, np.zeros(channels), scale=scale, alpha=alpha)

    def parameters(self):
        return {'weight': self.weight, 'bias': self.bias}


def _check_channels(x, p):
    x = as_tensor(x, 'SNI-r input')
    if x.shape[1] != p.channels:
        raise ValueError("gate has {} channels but input has {}".format(
            p.channels, x.shape[1]))
    return x


def snir_forward(x, p):
    """
    Gated, scaled nearest-neighbour upsampling.

    Parameters
    ----------
    x : numpy.ndarray
        (N, C, H, W) input
    p : SnirParams

    Returns
    -------
    y : numpy.ndarray
        (N, C, sH, sW) output ``u * sigmoid(conv1x1(u))``

    Examples
    --------
    >>> p = SnirParams(np.zeros((1, 1, 1, 1)), np.zeros(1), scale=2)
    >>> snir_forward(np.full((1, 1, 1, 1), 4.), p)[0, 0]
    array([[0.5, 0.5],
           [0.5, 0.5]])
    """
    x = _check_channels(x, p)
    u = p.alpha * nearest_upsample(x, p.scale)
    return hadamard(u, sigmoid(conv2d_forward(u, p.gate)))


def snir_backward(x, p, grad_out):
    """
    Gradients of :func:`snir_forward` with respect to ``x``, ``weight`` and
    ``bias``; ``u`` feeds both factors of the product.
    """
    x = _check_channels(x, p)
    u = p.alpha * nearest_upsample(x, p.scale)
    s = sigmoid(conv2d_forward(u, p.gate))
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != u.shape:
        raise ValueError("grad_out has shape {}, forward output is {}".format(
            grad_out.shape, u.shape))
    grad_z = hadamard(grad_out, u * s * (1. - s))
    grad_u, grad_w, grad_b = conv2d_backward(u, p.gate, grad_z)
    grad_u = grad_u + hadamard(grad_out, s)
    grad_x = p.alpha * nearest_upsample_backward(grad_u, p.scale)
    return {'x': grad_x, 'weight': grad_w, 'bias': grad_b}


def sni_baseline_forward(x, scale):
    """
    Soft nearest-neighbour baseline without a learned gate.

    >>> sni_baseline_forward(np.full((1, 1, 1, 1), 4.), 2)[0, 0]
    array([[1., 1.],
           [1., 1.]])
    """
    return nearest_upsample(x, scale) / scale ** 2
