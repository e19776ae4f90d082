"""
The FSLConv block: two serial half-width 3x3 stages with gated batch
normalisation, concatenated along the channel axis.
"""

from dataclasses import dataclass, replace

import numpy as np

from .tensorkit import (Conv2dParams, BatchNormParams, as_tensor,
                        conv2d_forward, conv2d_backward, batchnorm_forward,
                        batchnorm_backward, silu_gate, silu_backward,
                        concat_channels, split_channels)

__all__ = ['ACTIVATIONS', 'FslConvParams', 'fsl_stage1', 'fslconv_forward',
           'fslconv_backward', 'standard_weight_count']

ACTIVATIONS = ('identity', 'relu', 'silu')


def _outer(name, a):
    if name == 'relu':
        return np.maximum(a, 0.)
    if name == 'silu':
        return silu_gate(a)
    return a


def _outer_backward(name, a, grad):
    if name == 'relu':
        return grad * (a > 0.)
    if name == 'silu':
        return silu_backward(a, grad)
    return grad


@dataclass
class FslConvParams:
    """
    Parameters of one FSLConv block.

    Parameters
    ----------
    stage1 : Conv2dParams
        (C0, C1, 3, 3) kernel, padding 1, stride of the enclosing layer
    bn1 : BatchNormParams
        Over C0 channels
    stage2 : Conv2dParams
        (C0, C0, 3, 3) kernel, padding 1, stride 1
    bn2 : BatchNormParams
        Over C0 channels
    outer_act : str, optional
        Activation applied after the gated fraction: ``'identity'``
        (default), ``'relu'`` or ``'silu'``
    """

    stage1: Conv2dParams
    bn1: BatchNormParams
    stage2: Conv2dParams
    bn2: BatchNormParams
    outer_act: str = 'identity'

    def __post_init__(self):
        c0 = self.stage1.out_channels
        if self.outer_act not in ACTIVATIONS:
            raise ValueError("outer_act must be one of {}".format(
                ', '.join(ACTIVATIONS)))
        if self.stage1.kernel_size != (3, 3) or self.stage1.padding != 1:
            raise ValueError("stage 1 must be a 3x3 convolution with "
                             "padding 1")
        if self.stage1.groups != 1 or self.stage2.groups != 1:
            raise ValueError("FSLConv stages are ungrouped")
        if self.stage2.weight.shape != (c0, c0, 3, 3):
            raise ValueError("stage 2 weight must be ({0}, {0}, 3, 3)".format(
                c0))
        if self.stage2.stride != 1 or self.stage2.padding != 1:
            raise ValueError("stage 2 must keep the spatial size "
                             "(stride 1, padding 1)")
        if self.bn1.channels != c0 or self.bn2.channels != c0:
            raise ValueError("batch norms must cover {} channels".format(c0))

    @property
    def half_channels(self):
        return self.stage1.out_channels

    @property
    def in_channels(self):
        return self.stage1.in_channels

    @property
    def out_channels(self):
        return 2 * self.half_channels

    @property
    def weight_count(self):
        """Convolution weights of both stages (bias and BN excluded)."""
        return int(self.stage1.weight.size + self.stage2.weight.size)

    @classmethod
    def initialise(cls, c1, c2, stride=1, seed=0, outer_act='identity',
                   eps=1e-8):
        """
        He-initialised block mapping ``c1`` to ``c2`` channels.

        Weights are drawn from N(0, 2 / fan_in); the convolutions carry no
        bias (the batch norm shift plays that role), gamma is 1 and beta 0.

        Examples
        --------
        >>> p = FslConvParams.initialise(8, 8, stride=2)
        >>> p.out_channels, p.weight_count
        (8, 432)
        """
        if c2 % 2 or c2 < 2:
            raise ValueError("FSLConv output channels must be even, "
                             "got {}".format(c2))
        c0 = c2 // 2
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((c0, c1, 3, 3)) * np.sqrt(2. / (c1 * 9))
        w2 = rng.standard_normal((c0, c0, 3, 3)) * np.sqrt(2. / (c0 * 9))
        return cls(Conv2dParams(w1, stride=stride, padding=1),
                   BatchNormParams.identity(c0, eps=eps),
                   Conv2dParams(w2, stride=1, padding=1),
                   BatchNormParams.identity(c0, eps=eps),
                   outer_act=outer_act)

    def parameters(self):
        """Named trainable arrays, keyed like the gradients."""
        named = {'stage1.weight': self.stage1.weight,
                 'bn1.gamma': self.bn1.gamma, 'bn1.beta': self.bn1.beta,
                 'stage2.weight': self.stage2.weight,
                 'bn2.gamma': self.bn2.gamma, 'bn2.beta': self.bn2.beta}
        if self.stage1.bias is not None:
            named['stage1.bias'] = self.stage1.bias
        if self.stage2.bias is not None:
            named['stage2.bias'] = self.stage2.bias
        return named

    def with_parameters(self, named):
        """Copy of the block with the arrays in ``named`` swapped in."""
        parts = {}
        for part in ('stage1', 'bn1', 'stage2', 'bn2'):
            changes = {key.split('.', 1)[1]: value
                       for key, value in named.items()
                       if key.startswith(part + '.')}
            parts[part] = replace(getattr(self, part), **changes)
        return replace(self, **parts)


def standard_weight_count(c1, c2, k=3):
    """Weights of a plain ``k x k`` convolution from ``c1`` to ``c2``."""
    return c1 * c2 * k * k


def _stage(x, conv, bn, outer_act):
    z = conv2d_forward(x, conv)
    h, _ = batchnorm_forward(z, bn)
    a = silu_gate(h)
    return z, h, a, _outer(outer_act, a)


def fsl_stage1(x, p):
    """First-stage features G1 = outer_act(silu_gate(BN1(conv1(x))))."""
    x = as_tensor(x, 'FSLConv input')
    return _stage(x, p.stage1, p.bn1, p.outer_act)[3]


def fslconv_forward(x, p):
    """
    Apply an FSLConv block.

    Parameters
    ----------
    x : numpy.ndarray
        (N, C1, H, W) input
    p : FslConvParams

    Returns
    -------
    y : numpy.ndarray
        (N, C2, H', W'): the stage-1 features G1 followed by the stage-2
        features G2 computed from G1. H' and W' follow stage 1's stride.

    Examples
    --------
    >>> p = FslConvParams.initialise(4, 8, stride=2, seed=1)
    >>> fslconv_forward(np.ones((1, 4, 8, 8)), p).shape
    (1, 8, 4, 4)
    """
    x = as_tensor(x, 'FSLConv input')
    if x.shape[1] != p.in_channels:
        raise ValueError("FSLConv expects {} input channels, got {}".format(
            p.in_channels, x.shape[1]))
    g1 = _stage(x, p.stage1, p.bn1, p.outer_act)[3]
    g2 = _stage(g1, p.stage2, p.bn2, p.outer_act)[3]
    return concat_channels(g1, g2)


def fslconv_backward(x, p, grad_out):
    """
    Gradients of :func:`fslconv_forward`.

    G1 receives gradient twice: directly through its slice of the output and
    through stage 2.

    Returns
    -------
    grads : dict
        ``'x'`` plus one entry per key of :meth:`FslConvParams.parameters`
    """
    x = as_tensor(x, 'FSLConv input')
    if x.shape[1] != p.in_channels:
        raise ValueError("FSLConv expects {} input channels, got {}".format(
            p.in_channels, x.shape[1]))
    z1, h1, a1, g1 = _stage(x, p.stage1, p.bn1, p.outer_act)
    z2, h2, a2, g2 = _stage(g1, p.stage2, p.bn2, p.outer_act)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    expected = (g1.shape[0], p.out_channels) + g1.shape[2:]
    if grad_out.shape != expected:
        raise ValueError("grad_out has shape {}, forward output is {}".format(
            grad_out.shape, expected))
    grad_direct, grad_g2 = split_channels(grad_out, p.half_channels)
    grads = {}

    grad_a2 = _outer_backward(p.outer_act, a2, grad_g2)
    grad_h2 = silu_backward(h2, grad_a2)
    grad_z2, grads['bn2.gamma'], grads['bn2.beta'] = batchnorm_backward(
        z2, p.bn2, grad_h2)
    grad_g1, grads['stage2.weight'], b2 = conv2d_backward(g1, p.stage2,
                                                          grad_z2)
    grad_g1 = grad_g1 + grad_direct

    grad_a1 = _outer_backward(p.outer_act, a1, grad_g1)
    grad_h1 = silu_backward(h1, grad_a1)
    grad_z1, grads['bn1.gamma'], grads['bn1.beta'] = batchnorm_backward(
        z1, p.bn1, grad_h1)
    grads['x'], grads['stage1.weight'], b1 = conv2d_backward(x, p.stage1,
                                                             grad_z1)
    if b1 is not None:
        grads['stage1.bias'] = b1
    if b2 is not None:
        grads['stage2.bias'] = b2
    return grads
