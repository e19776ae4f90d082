import numpy as np
import pytest
from pytest import mark

from darkforge.tensorkit import (Conv2dParams, BatchNormParams,
                                 conv_output_size, conv2d_forward,
                                 conv2d_backward, conv2d_naive,
                                 batchnorm_forward, batchnorm_backward,
                                 sigmoid, sigmoid_backward, silu_gate,
                                 silu_backward, hadamard, concat_channels,
                                 split_channels, nearest_upsample,
                                 nearest_upsample_backward, avg_pool,
                                 fd_cotangent, finite_diff_report,
                                 finite_diff_check)


def _conv_check(seed, stride=1, padding=1, groups=1):
    rng = np.random.default_rng(seed)

    def forward(x, weight, bias):
        return conv2d_forward(x, Conv2dParams(weight, bias, stride, padding,
                                              groups))

    def backward(g, x, weight, bias):
        gx, gw, gb = conv2d_backward(
            x, Conv2dParams(weight, bias, stride, padding, groups), g)
        return {'x': gx, 'weight': gw, 'bias': gb}

    inputs = {'x': rng.standard_normal((2, 4, 5, 5)),
              'weight': rng.standard_normal((6, 4 // groups, 3, 3)),
              'bias': rng.standard_normal(6)}
    return finite_diff_check(forward, backward, inputs, seed=seed)


def test_conv_scaling_example():
    x = np.array([[[[1., 2.], [3., 4.]]]])
    y = conv2d_forward(x, Conv2dParams(np.full((1, 1, 1, 1), 2.)))
    assert y[0, 0].tolist() == [[2., 4.], [6., 8.]]


def test_conv_identity():
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    weight = np.eye(3).reshape(3, 3, 1, 1)
    y = conv2d_forward(x, Conv2dParams(weight, np.zeros(3)))
    assert np.array_equal(y, x)


def test_conv_ones_kernel():
    y = conv2d_forward(np.ones((1, 1, 5, 5)),
                       Conv2dParams(np.ones((1, 1, 3, 3))))
    assert y.shape == (1, 1, 3, 3)
    assert (y == 9.).all()


@mark.parametrize('size, kernel, stride, padding, expected',
                  [(32, 3, 1, 1, 32), (640, 3, 2, 1, 320), (5, 3, 1, 0, 3),
                   (7, 3, 2, 0, 3), (4, 1, 1, 0, 4)])
def test_conv_output_size(size, kernel, stride, padding, expected):
    assert conv_output_size(size, kernel, stride, padding) == expected


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        conv2d_forward(np.ones((1, 2, 4, 4)),
                       Conv2dParams(np.ones((1, 3, 1, 1))))


@mark.parametrize('kwargs', [{'stride': 0}, {'padding': -1}, {'groups': 4},
                             {'bias': np.zeros(2)}])
def test_conv_params_validation(kwargs):
    with pytest.raises(ValueError):
        Conv2dParams(np.ones((3, 1, 3, 3)), **kwargs)


@mark.parametrize('stride, padding, groups', [(1, 0, 1), (2, 1, 1),
                                              (1, 1, 2), (2, 0, 4)])
def test_naive_matches_vectorised(stride, padding, groups):
    rng = np.random.default_rng(stride + padding + groups)
    x = rng.standard_normal((2, 4, 6, 6))
    p = Conv2dParams(rng.standard_normal((8, 4 // groups, 3, 3)),
                     rng.standard_normal(8), stride, padding, groups)
    y, ops = conv2d_naive(x, p)
    assert np.allclose(y, conv2d_forward(x, p), rtol=1e-12, atol=1e-12)
    taps = 2 * 8 * y.shape[2] * y.shape[3] * (4 // groups) * 9
    assert ops == {'mul': taps, 'add': taps}


def test_conv_backward_zero():
    x = np.ones((1, 2, 4, 4))
    p = Conv2dParams(np.ones((3, 2, 3, 3)), np.ones(3), padding=1)
    gx, gw, gb = conv2d_backward(x, p, np.zeros((1, 3, 4, 4)))
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_scalar():
    x = np.full((1, 1, 1, 1), 3.)
    p = Conv2dParams(np.full((1, 1, 1, 1), 2.))
    gx, gw, gb = conv2d_backward(x, p, np.full((1, 1, 1, 1), 5.))
    assert gx.item() == 10. and gw.item() == 15. and gb is None


def test_conv_backward_shape_mismatch():
    p = Conv2dParams(np.ones((1, 1, 3, 3)))
    with pytest.raises(ValueError):
        conv2d_backward(np.ones((1, 1, 5, 5)), p, np.ones((1, 1, 5, 5)))


@mark.timeout(60)
@mark.parametrize('seed', range(20))
def test_conv_gradients(seed):
    assert _conv_check(seed, stride=1 + seed % 2) < 1e-6


@mark.parametrize('seed', range(3))
def test_grouped_conv_gradients(seed):
    assert _conv_check(seed, padding=0, groups=2) < 1e-6


def test_batchnorm_normalises():
    x = 3. + 2. * np.random.default_rng(1).standard_normal((4, 3, 5, 5))
    y, stats = batchnorm_forward(x, BatchNormParams.identity(3))
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0., atol=1e-12)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1., atol=1e-6)
    assert np.allclose(stats.mean, x.mean(axis=(0, 2, 3)))
    assert np.allclose(stats.var, x.var(axis=(0, 2, 3)))


def test_batchnorm_constant_input():
    p = BatchNormParams(np.ones(2), np.array([0.5, -1.]))
    y, _ = batchnorm_forward(np.full((2, 2, 3, 3), 7.), p)
    assert (y[:, 0] == 0.5).all() and (y[:, 1] == -1.).all()


def test_batchnorm_provided():
    p = BatchNormParams([2.], [1.], mode='provided', running_mean=[0.],
                        running_var=[1.])
    y, _ = batchnorm_forward(np.full((1, 1, 1, 1), 3.), p)
    assert y.item() == pytest.approx(2. * 3. / np.sqrt(1. + 1e-8) + 1.)


@mark.parametrize('kwargs', [{'eps': 0.}, {'mode': 'running'},
                             {'mode': 'provided'}])
def test_batchnorm_validation(kwargs):
    with pytest.raises(ValueError):
        BatchNormParams(np.ones(2), np.zeros(2), **kwargs)


def _bn_check(seed, mode):
    rng = np.random.default_rng(seed)
    extra = {}
    if mode == 'provided':
        extra = {'running_mean': rng.standard_normal(3),
                 'running_var': rng.uniform(0.5, 2., 3)}

    def params(gamma, beta):
        return BatchNormParams(gamma, beta, mode=mode, **extra)

    def forward(x, gamma, beta):
        return batchnorm_forward(x, params(gamma, beta))[0]

    def backward(g, x, gamma, beta):
        gx, gg, gb = batchnorm_backward(x, params(gamma, beta), g)
        return {'x': gx, 'gamma': gg, 'beta': gb}

    inputs = {'x': 1. + 2. * rng.standard_normal((2, 3, 4, 4)),
              'gamma': rng.uniform(0.5, 2., 3),
              'beta': rng.standard_normal(3)}
    return finite_diff_check(forward, backward, inputs, seed=seed)


@mark.timeout(60)
@mark.parametrize('seed', range(20))
def test_batchnorm_gradients(seed):
    assert _bn_check(seed, 'batch') < 1e-5


@mark.parametrize('seed', range(3))
def test_batchnorm_provided_gradients(seed):
    assert _bn_check(seed, 'provided') < 1e-6


def test_silu_values():
    assert silu_gate(0.) == 0.
    assert silu_gate(1.) == pytest.approx(0.731059, abs=1e-6)
    z = np.linspace(31., 60., 7)
    assert np.allclose(silu_gate(z), z, rtol=0., atol=1e-9)


def test_silu_bounds():
    z = np.random.default_rng(2).standard_normal(1000) * 5.
    z = z[z != 0.]
    out = silu_gate(z)
    assert (out > np.minimum(z, 0.)).all()
    assert (out <= np.maximum(z, 0.)).all()


@mark.parametrize('seed', range(20))
def test_silu_gradients(seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1., 3., (2, 3, 4, 4))
    error = finite_diff_check(lambda z: silu_gate(z),
                              lambda g, z: {'z': silu_backward(z, g)},
                              {'z': z}, seed=seed)
    assert error < 1e-6


@mark.parametrize('seed', range(20))
def test_sigmoid_gradients(seed):
    z = 2. * np.random.default_rng(seed).standard_normal((2, 3, 4, 4))
    error = finite_diff_check(lambda z: sigmoid(z),
                              lambda g, z: {'z': sigmoid_backward(z, g)},
                              {'z': z}, seed=seed)
    assert error < 1e-6


def test_elementwise_helpers():
    x = np.random.default_rng(3).standard_normal((1, 2, 3, 3))
    assert sigmoid(0.) == 0.5
    assert np.array_equal(hadamard(x, np.ones_like(x)), x)
    with pytest.raises(ValueError):
        hadamard(x, np.ones((1, 2, 3, 4)))


def test_concat_and_split():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((2, 3, 4, 4))
    b = rng.standard_normal((2, 5, 4, 4))
    y = concat_channels(a, b)
    assert y.shape == (2, 8, 4, 4)
    first, second = split_channels(y, 3)
    assert np.array_equal(first, a) and np.array_equal(second, b)
    with pytest.raises(ValueError):
        concat_channels(a, np.ones((2, 5, 4, 3)))


@mark.parametrize('scale', [1, 2, 3])
def test_nearest_upsample(scale):
    x = np.random.default_rng(scale).standard_normal((1, 2, 3, 4))
    up = nearest_upsample(x, scale)
    assert up.shape == (1, 2, 3 * scale, 4 * scale)
    assert up.sum() == pytest.approx(scale ** 2 * x.sum())
    assert np.allclose(avg_pool(up, scale), x, rtol=0., atol=1e-15)
    if scale == 1:
        assert np.array_equal(up, x)


def test_upsample_single_value():
    up = nearest_upsample(np.full((1, 1, 1, 1), 5.), 2)
    assert up[0, 0].tolist() == [[5., 5.], [5., 5.]]


def test_upsample_backward_is_adjoint():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 3, 3))
    g = rng.standard_normal((2, 3, 6, 6))
    lhs = np.sum(nearest_upsample(x, 2) * g)
    rhs = np.sum(x * nearest_upsample_backward(g, 2))
    assert lhs == pytest.approx(rhs)


def test_finite_diff_catches_wrong_gradient():
    z = np.linspace(-1., 2., 9)
    errors = finite_diff_report(lambda z: z ** 2,
                                lambda g, z: {'z': 2.002 * z * g},
                                {'z': z})
    assert errors['z'] > 1e-4


def test_finite_diff_linear_is_exact():
    w = np.random.default_rng(6).standard_normal((3, 4))
    error = finite_diff_check(lambda x: w @ x, lambda g, x: {'x': w.T @ g},
                              {'x': np.ones(4)})
    assert error < 1e-9


def test_finite_diff_errors():
    with pytest.raises(ValueError):
        finite_diff_check(lambda z: z, lambda g, z: {'z': g},
                          {'z': np.ones(2)}, step=0.)
    with pytest.raises(ValueError):
        finite_diff_check(lambda z: z / 0., lambda g, z: {'z': g},
                          {'z': np.ones(2)})


def test_cotangent_is_independent_of_input_stream():
    shape = (2, 3, 4, 4)
    g = fd_cotangent(shape, seed=5)
    assert np.array_equal(g, fd_cotangent(shape, seed=5))
    first_draw = np.random.default_rng(5).standard_normal(shape)
    assert abs(np.corrcoef(g.ravel(), first_draw.ravel())[0, 1]) < 0.5


@mark.parametrize('seed', range(5))
def test_batchnorm_gradients_with_input_drawn_first(seed):
    # x is the first draw of default_rng(seed), as test inputs usually are
    x = np.random.default_rng(seed).standard_normal((2, 3, 4, 4))
    p = BatchNormParams.identity(3)
    gx = batchnorm_backward(x, p, fd_cotangent(x.shape, seed))[0]
    assert np.abs(gx).max() > 1e-2

    def forward(x):
        return batchnorm_forward(x, p)[0]

    def backward(g, x):
        return {'x': batchnorm_backward(x, p, g)[0]}

    assert finite_diff_check(forward, backward, {'x': x}, seed=seed) < 1e-5


def test_finite_diff_has_no_error_floor():
    # a small coordinate is judged against its own magnitude
    scale = np.array([1., 1e-5])
    errors = finite_diff_report(
        lambda z: z * scale,
        lambda g, z: {'z': g * (scale + np.array([0., 1e-8]))},
        {'z': np.ones(2)})
    assert errors['z'] > 1e-4


def test_richardson_cancels_truncation():
    z = np.linspace(0., 1., 5)
    args = (lambda z: np.exp(z), lambda g, z: {'z': g * np.exp(z)},
            {'z': z})
    assert finite_diff_check(*args, step=1e-2) > 1e-6
    assert finite_diff_check(*args, step=1e-2, richardson=True) < 1e-8
