"""
Dense N-C-H-W tensor kernels with analytic backward passes.

Tensors are float64 ``numpy.ndarray`` of shape (N, C, H, W). Every kernel is
a pure function; backward functions recompute what they need from the
forward inputs instead of keeping hidden state. Reductions use ``einsum``
without BLAS dispatch so results are reproducible bit for bit.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

__all__ = ['Conv2dParams', 'BatchNormParams', 'BatchNormStats', 'as_tensor',
           'conv_output_size', 'conv2d_forward', 'conv2d_backward',
           'conv2d_naive', 'batchnorm_forward', 'batchnorm_backward',
           'sigmoid', 'sigmoid_backward', 'silu_gate', 'silu_backward',
           'hadamard', 'concat_channels', 'split_channels',
           'nearest_upsample', 'nearest_upsample_backward', 'avg_pool',
           'fd_cotangent', 'finite_diff_report', 'finite_diff_check']

_COTANGENT_STREAM = 0x5eed


def as_tensor(x, name='tensor'):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError("{} must be 4-D (N, C, H, W), got shape {}".format(
            name, x.shape))
    return x


@dataclass
class Conv2dParams:
    """
    Weights and geometry of a 2-D convolution.

    Parameters
    ----------
    weight : numpy.ndarray
        (C_out, C_in / groups, Kh, Kw)
    bias : numpy.ndarray, optional
        (C_out,)
    stride : int, optional
    padding : int, optional
        Zero padding applied to every spatial side
    groups : int, optional
        Channel groups; 1 is a standard convolution
    """

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 4 or min(self.weight.shape) < 1:
            raise ValueError("conv weight must be (C_out, C_in, Kh, Kw)")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        if self.groups < 1 or self.weight.shape[0] % self.groups:
            raise ValueError("groups must divide the output channels")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weight.shape[0],):
                raise ValueError("bias must have shape (C_out,)")

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1] * self.groups

    @property
    def kernel_size(self):
        return self.weight.shape[2], self.weight.shape[3]


def conv_output_size(size, kernel, stride, padding):
    """``floor((size + 2 * padding - kernel) / stride) + 1``"""
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError("input of size {} too small for kernel {}".format(
            size, kernel))
    return out


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding),
                      (padding, padding)))


def _windows(xp, p):
    kh, kw = p.kernel_size
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::p.stride, ::p.stride]


def _group_slices(p):
    cin = p.weight.shape[1]
    cout = p.out_channels // p.groups
    return [(slice(g * cin, (g + 1) * cin), slice(g * cout, (g + 1) * cout))
            for g in range(p.groups)]


def _check_input(x, p):
    x = as_tensor(x, 'conv input')
    if x.shape[1] != p.in_channels:
        raise ValueError("conv expects {} input channels, got {}".format(
            p.in_channels, x.shape[1]))
    kh, kw = p.kernel_size
    conv_output_size(x.shape[2], kh, p.stride, p.padding)
    conv_output_size(x.shape[3], kw, p.stride, p.padding)
    return x


def conv2d_forward(x, p):
    """
    Cross-correlation (no kernel flip) with zero padding.

    Parameters
    ----------
    x : numpy.ndarray
        (N, C_in, H, W) input
    p : Conv2dParams
        Weights and geometry

    Returns
    -------
    y : numpy.ndarray
        (N, C_out, H', W') with ``H' = floor((H + 2 pad - Kh) / stride) + 1``

    Examples
    --------
    >>> x = np.array([[[[1., 2.], [3., 4.]]]])
    >>> conv2d_forward(x, Conv2dParams(np.full((1, 1, 1, 1), 2.)))[0, 0]
    array([[2., 4.],
           [6., 8.]])
    """
    x = _check_input(x, p)
    win = _windows(_pad(x, p.padding), p)
    outs = [np.einsum('nchwkl,ockl->nohw', win[:, cs], p.weight[os_])
            for cs, os_ in _group_slices(p)]
    y = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=1)
    if p.bias is not None:
        y = y + p.bias[None, :, None, None]
    return y


def conv2d_backward(x, p, grad_out):
    """
    Gradients of :func:`conv2d_forward`.

    Returns
    -------
    grad_x : numpy.ndarray
    grad_weight : numpy.ndarray
    grad_bias : numpy.ndarray or None
        None when the convolution has no bias
    """
    x = _check_input(x, p)
    xp = _pad(x, p.padding)
    win = _windows(xp, p)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    expected = (x.shape[0], p.out_channels) + win.shape[2:4]
    if grad_out.shape != expected:
        raise ValueError("grad_out has shape {}, forward output is {}".format(
            grad_out.shape, expected))
    kh, kw = p.kernel_size
    ho, wo = grad_out.shape[2:]
    s = p.stride
    grad_w = np.empty_like(p.weight)
    grad_xp = np.zeros_like(xp)
    for cs, os_ in _group_slices(p):
        g = grad_out[:, os_]
        grad_w[os_] = np.einsum('nchwkl,nohw->ockl', win[:, cs], g)
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, cs, i:i + s * (ho - 1) + 1:s,
                        j:j + s * (wo - 1) + 1:s] += np.einsum(
                            'nohw,oc->nchw', g, p.weight[os_, :, i, j])
    pad = p.padding
    grad_x = grad_xp[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]]
    grad_b = None if p.bias is None else grad_out.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


def conv2d_naive(x, p):
    """
    Loop-nest convolution that counts its own arithmetic.

    The bias (or zero) seeds each accumulator and every kernel tap is one
    multiply and one add, padded taps included.

    Returns
    -------
    y : numpy.ndarray
        Same values as :func:`conv2d_forward`
    ops : dict
        ``{'mul': ..., 'add': ...}`` counts
    """
    x = _check_input(x, p)
    xp = _pad(x, p.padding)
    kh, kw = p.kernel_size
    ho = conv_output_size(x.shape[2], kh, p.stride, p.padding)
    wo = conv_output_size(x.shape[3], kw, p.stride, p.padding)
    cin_g = p.weight.shape[1]
    cout_g = p.out_channels // p.groups
    y = np.zeros((x.shape[0], p.out_channels, ho, wo))
    mul = add = 0
    for n in range(x.shape[0]):
        for o in range(p.out_channels):
            first = (o // cout_g) * cin_g
            for i in range(ho):
                for j in range(wo):
                    acc = 0. if p.bias is None else p.bias[o]
                    for c in range(cin_g):
                        for a in range(kh):
                            for b in range(kw):
                                acc += (p.weight[o, c, a, b]
                                        * xp[n, first + c, i * p.stride + a,
                                             j * p.stride + b])
                                mul += 1
                                add += 1
                    y[n, o, i, j] = acc
    return y, {'mul': mul, 'add': add}


@dataclass
class BatchNormParams:
    """
    Per-channel batch normalisation.

    ``mode='batch'`` normalises with the mean and population variance over
    the batch and spatial axes; ``mode='provided'`` uses ``running_mean`` and
    ``running_var``.
    """

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-8
    mode: str = 'batch'
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ValueError("gamma and beta must be equal-length vectors")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.mode not in ('batch', 'provided'):
            raise ValueError("mode must be 'batch' or 'provided'")
        if self.mode == 'provided':
            if self.running_mean is None or self.running_var is None:
                raise ValueError("provided mode needs running_mean and "
                                 "running_var")
            self.running_mean = np.asarray(self.running_mean,
                                           dtype=np.float64)
            self.running_var = np.asarray(self.running_var, dtype=np.float64)
            if (self.running_mean.shape != self.gamma.shape
                    or self.running_var.shape != self.gamma.shape):
                raise ValueError("running statistics must match gamma")

    @property
    def channels(self):
        return self.gamma.shape[0]

    @classmethod
    def identity(cls, channels, eps=1e-8):
        return cls(np.ones(channels), np.zeros(channels), eps=eps)


@dataclass
class BatchNormStats:
    mean: np.ndarray
    var: np.ndarray


def _bn_stats(x, p):
    if p.mode == 'provided':
        return p.running_mean, p.running_var
    return x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3))


def _per_channel(v):
    return v[None, :, None, None]


def batchnorm_forward(x, p):
    """
    Batch normalisation followed by the affine map ``gamma * x_hat + beta``.

    Returns
    -------
    y : numpy.ndarray
    stats : BatchNormStats
        Mean and variance used for the normalisation

    Examples
    --------
    >>> p = BatchNormParams([2.], [1.], mode='provided',
    ...                     running_mean=[0.], running_var=[1.])
    >>> y, _ = batchnorm_forward(np.full((1, 1, 1, 1), 3.), p)
    >>> round(float(y[0, 0, 0, 0]), 6)
    7.0
    """
    x = as_tensor(x, 'batchnorm input')
    if x.shape[1] != p.channels:
        raise ValueError("batchnorm expects {} channels, got {}".format(
            p.channels, x.shape[1]))
    mean, var = _bn_stats(x, p)
    x_hat = (x - _per_channel(mean)) / np.sqrt(_per_channel(var) + p.eps)
    y = _per_channel(p.gamma) * x_hat + _per_channel(p.beta)
    return y, BatchNormStats(mean, var)


def batchnorm_backward(x, p, grad_out):
    """
    Gradients of :func:`batchnorm_forward`.

    In batch mode the dependence of the mean and variance on ``x`` is
    included.

    Returns
    -------
    grad_x, grad_gamma, grad_beta : numpy.ndarray
    """
    x = as_tensor(x, 'batchnorm input')
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != x.shape:
        raise ValueError("grad_out shape {} differs from input {}".format(
            grad_out.shape, x.shape))
    mean, var = _bn_stats(x, p)
    inv_std = 1. / np.sqrt(_per_channel(var) + p.eps)
    x_hat = (x - _per_channel(mean)) * inv_std
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    g_hat = grad_out * _per_channel(p.gamma)
    if p.mode == 'provided':
        return g_hat * inv_std, grad_gamma, grad_beta
    m = x.shape[0] * x.shape[2] * x.shape[3]
    sum_g = g_hat.sum(axis=(0, 2, 3), keepdims=True)
    sum_gx = (g_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
    grad_x = inv_std / m * (m * g_hat - sum_g - x_hat * sum_gx)
    return grad_x, grad_gamma, grad_beta


def sigmoid(z):
    """
    Logistic function.

    >>> float(sigmoid(0.))
    0.5
    """
    return expit(np.asarray(z, dtype=np.float64))


def sigmoid_backward(z, grad_out):
    s = sigmoid(z)
    return grad_out * s * (1. - s)


def silu_gate(z):
    """
    The gated fraction ``z / (1 + exp(-z))``, i.e. ``z * sigmoid(z)``.

    Examples
    --------
    >>> round(float(silu_gate(1.)), 6)
    0.731059
    """
    z = np.asarray(z, dtype=np.float64)
    return z * expit(z)


def silu_backward(z, grad_out):
    z = np.asarray(z, dtype=np.float64)
    s = expit(z)
    return grad_out * (s + z * s * (1. - s))


def hadamard(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("hadamard operands differ in shape: {} vs {}".format(
            a.shape, b.shape))
    return a * b


def concat_channels(a, b):
    """Stack ``b``'s channels after ``a``'s."""
    a = as_tensor(a, 'first operand')
    b = as_tensor(b, 'second operand')
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2],
                                                b.shape[3]):
        raise ValueError("concat operands differ in N, H or W: {} vs {}"
                         .format(a.shape, b.shape))
    return np.concatenate([a, b], axis=1)


def split_channels(y, channels):
    """Inverse of :func:`concat_channels`: the first ``channels`` and the rest."""
    y = as_tensor(y)
    if not 0 <= channels <= y.shape[1]:
        raise ValueError("cannot split {} channels at {}".format(
            y.shape[1], channels))
    return y[:, :channels], y[:, channels:]


def _check_scale(scale):
    if int(scale) != scale or scale < 1:
        raise ValueError("scale must be a positive integer, got {}".format(
            scale))
    return int(scale)


def nearest_upsample(x, scale):
    """Replicate every pixel into a ``scale x scale`` block."""
    x = as_tensor(x)
    scale = _check_scale(scale)
    return np.repeat(np.repeat(x, scale, axis=2), scale, axis=3)


def nearest_upsample_backward(grad_out, scale):
    """Sum each ``scale x scale`` block of the upstream gradient."""
    grad_out = as_tensor(grad_out)
    scale = _check_scale(scale)
    n, c, h, w = grad_out.shape
    if h % scale or w % scale:
        raise ValueError("gradient dims not divisible by the scale")
    return grad_out.reshape(n, c, h // scale, scale, w // scale,
                            scale).sum(axis=(3, 5))


def avg_pool(x, size):
    """Non-overlapping ``size x size`` average pooling."""
    size = _check_scale(size)
    return nearest_upsample_backward(x, size) / size ** 2


def fd_cotangent(shape, seed=0):
    """
    Random cotangent of the finite-difference check.

    Drawn from a stream of its own so that it is independent of test inputs
    drawn from ``numpy.random.default_rng(seed)``.
    """
    rng = np.random.default_rng([int(seed), _COTANGENT_STREAM])
    return rng.standard_normal(shape)


def _central_difference(forward, inputs, name, idx, step, cotangent):
    # difference the outputs before contracting with the cotangent; the
    # realised perturbation is used as the denominator
    base = inputs[name]
    value = float(base[idx])
    outs = []
    for shifted_value in (value + step, value - step):
        shifted = dict(inputs)
        shifted[name] = base.copy()
        shifted[name][idx] = shifted_value
        outs.append(np.asarray(forward(**shifted), dtype=np.float64))
    width = (value + step) - (value - step)
    return float(np.sum((outs[0] - outs[1]) * cotangent)) / width


def finite_diff_report(forward, backward, inputs, step=1e-4, seed=0,
                       wrt=None, richardson=False):
    """
    Compare analytic gradients with central finite differences.

    A fixed random cotangent ``g`` (see :func:`fd_cotangent`) turns the
    operation into the scalar ``L = sum(forward(**inputs) * g)``; each
    coordinate of each checked input is perturbed by ``+-step``.

    Parameters
    ----------
    forward : callable
        ``forward(**inputs) -> numpy.ndarray``
    backward : callable
        ``backward(g, **inputs) -> dict`` of gradients keyed like ``inputs``
    inputs : dict
        Name -> array (0-d arrays for scalars)
    step : float, optional
    seed : int, optional
        Seed of the cotangent
    wrt : iterable of str, optional
        Inputs to check; defaults to every key ``backward`` returns
    richardson : bool, optional
        Combine the central differences at ``step`` and ``2 * step`` as
        ``(4 D(step) - D(2 step)) / 3``, which cancels their second-order
        truncation error. Meant for chains through batch normalisation.

    Returns
    -------
    errors : dict
        Input name -> max over coordinates of
        ``|analytic - numeric| / max(1e-8, |numeric|)``
    """
    if not step > 0:
        raise ValueError("step must be positive")
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    out = np.asarray(forward(**inputs))
    if not np.all(np.isfinite(out)):
        raise ValueError("forward produced non-finite values")
    cotangent = fd_cotangent(out.shape, seed)
    analytic = backward(cotangent, **inputs)
    names = list(analytic) if wrt is None else list(wrt)
    errors = {}
    for name in names:
        grad = np.asarray(analytic[name], dtype=np.float64)
        if not np.all(np.isfinite(grad)):
            raise ValueError("analytic gradient of {} is not finite".format(
                name))
        numeric = np.empty(inputs[name].shape)
        for idx in np.ndindex(numeric.shape):
            numeric[idx] = _central_difference(forward, inputs, name, idx,
                                               step, cotangent)
            if richardson:
                wide = _central_difference(forward, inputs, name, idx,
                                           2 * step, cotangent)
                numeric[idx] = (4. * numeric[idx] - wide) / 3.
        if not np.all(np.isfinite(numeric)):
            raise ValueError("numeric gradient of {} is not finite".format(
                name))
        denom = np.maximum(1e-8, np.abs(numeric))
        errors[name] = float(np.max(np.abs(grad - numeric) / denom,
                                    initial=0.))
    return errors


def finite_diff_check(forward, backward, inputs, step=1e-4, seed=0,
                      wrt=None, richardson=False):
    """
    Largest relative gradient error over all checked inputs.

    See :func:`finite_diff_report` for the arguments.

    Examples
    --------
    >>> def fwd(z):
    ...     return silu_gate(z)
    >>> def bwd(g, z):
    ...     return {'z': silu_backward(z, g)}
    >>> finite_diff_check(fwd, bwd, {'z': np.linspace(-1., 2., 7)}) < 1e-6
    True
    """
    errors = finite_diff_report(forward, backward, inputs, step=step,
                                seed=seed, wrt=wrt, richardson=richardson)
    return max(errors.values(), default=0.)
