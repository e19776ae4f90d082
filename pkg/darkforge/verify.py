"""
Self-verification battery run by ``darkforge check``.

Every suite returns report rows with the columns ``name``, ``passed``,
``max_error``, ``tolerance`` and ``detail``.
"""

import logging
import time

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.stats import norm

from .costmodel import (LayerSpec, conv_flops, conv_flops_grouped,
                        conv_macs, conv_macs_grouped, flops_increment,
                        macs_increment, count_conv_ops)
from .degrade import (DegradeConfig, TargetSample, TruncNormParams,
                      truncnorm_sample, degrade_image, linear_transform,
                      color_ratios, consistency_mask, corrected_values)
from .errors import VerificationError
from .fslconv import FslConvParams, fslconv_forward, fslconv_backward
from .image_stats import channel_mean_std, summarize_corpus
from .lapm import (LapmConfig, LapmParams, photosensitive_mask,
                   mask_pyramid, texture_features, texture_backward)
from .snir import SnirParams, snir_forward, snir_backward
from .tensorkit import (Conv2dParams, BatchNormParams, conv2d_forward,
                        conv2d_backward, batchnorm_forward,
                        batchnorm_backward, sigmoid, sigmoid_backward,
                        silu_gate, silu_backward, nearest_upsample,
                        avg_pool, finite_diff_check)

__all__ = ['GRADIENT_OPS', 'PERTURB_FACTOR', 'REPORT_COLUMNS',
           'gradient_case', 'gradient_suite', 'sampler_suite',
           'degrade_suite', 'cost_suite', 'lapm_suite', 'snir_suite',
           'run_battery', 'assert_passed']

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['name', 'passed', 'max_error', 'tolerance', 'detail']
PERTURB_FACTOR = 1. + 1e-3


def _row(name, max_error, tolerance, detail='', passed=None):
    if passed is None:
        passed = max_error <= tolerance
    return {'name': name, 'passed': bool(passed),
            'max_error': float(max_error), 'tolerance': float(tolerance),
            'detail': detail}


def _conv_case(rng, seed):
    stride = 1 + seed % 2
    x = rng.standard_normal((2, 3, 5, 5))

    def forward(x, weight, bias):
        return conv2d_forward(x, Conv2dParams(weight, bias, stride, 1))

    def backward(g, x, weight, bias):
        gx, gw, gb = conv2d_backward(x, Conv2dParams(weight, bias, stride, 1),
                                     g)
        return {'x': gx, 'weight': gw, 'bias': gb}

    inputs = {'x': x, 'weight': rng.standard_normal((4, 3, 3, 3)),
              'bias': rng.standard_normal(4)}
    return forward, backward, inputs


def _batchnorm_case(rng, seed):
    def forward(x, gamma, beta):
        return batchnorm_forward(x, BatchNormParams(gamma, beta))[0]

    def backward(g, x, gamma, beta):
        gx, gg, gb = batchnorm_backward(x, BatchNormParams(gamma, beta), g)
        return {'x': gx, 'gamma': gg, 'beta': gb}

    inputs = {'x': 1. + 2. * rng.standard_normal((2, 3, 4, 4)),
              'gamma': rng.uniform(0.5, 2., 3),
              'beta': rng.standard_normal(3)}
    return forward, backward, inputs


def _sigmoid_case(rng, seed):
    return (lambda z: sigmoid(z),
            lambda g, z: {'z': sigmoid_backward(z, g)},
            {'z': 2. * rng.standard_normal((2, 3, 4, 4))})


def _silu_case(rng, seed):
    # the derivative vanishes near z = -1.28; stay clear of it
    return (lambda z: silu_gate(z),
            lambda g, z: {'z': silu_backward(z, g)},
            {'z': rng.uniform(-1., 3., (2, 3, 4, 4))})


def _fslconv_case(rng, seed):
    p = FslConvParams.initialise(4, 8, stride=1 + seed % 2, seed=seed)

    def forward(**named):
        return fslconv_forward(named['x'], p.with_parameters(
            {k: v for k, v in named.items() if k != 'x'}))

    def backward(g, **named):
        return fslconv_backward(named['x'], p.with_parameters(
            {k: v for k, v in named.items() if k != 'x'}), g)

    inputs = {'x': rng.standard_normal((1, 4, 6, 6))}
    inputs.update({k: v.copy() for k, v in p.parameters().items()})
    inputs['bn1.gamma'] = rng.uniform(0.5, 2., 4)
    inputs['bn2.beta'] = 0.1 * rng.standard_normal(4)
    return forward, backward, inputs


def _snir_case(rng, seed):
    def forward(x, weight, bias):
        return snir_forward(x, SnirParams(weight, bias, scale=2))

    def backward(g, x, weight, bias):
        return snir_backward(x, SnirParams(weight, bias, scale=2), g)

    inputs = {'x': rng.standard_normal((1, 3, 4, 4)),
              'weight': rng.standard_normal((3, 3, 1, 1)),
              'bias': rng.standard_normal(3)}
    return forward, backward, inputs


def _texture_case(rng, seed):
    mask = (rng.random((8, 8)) > 0.5).astype(np.float64)

    def params(w, bias, gamma, beta):
        return LapmParams(float(w), float(bias), float(gamma), float(beta))

    def forward(w, bias, gamma, beta):
        return texture_features(mask, params(w, bias, gamma, beta))

    def backward(g, w, bias, gamma, beta):
        return texture_backward(mask, params(w, bias, gamma, beta), g)

    inputs = {name: np.array(value) for name, value in
              zip(('w', 'bias', 'gamma', 'beta'),
                  rng.uniform(-1.5, 1.5, 4))}
    return forward, backward, inputs


# op -> (case builder, tolerance, finite-difference options)
GRADIENT_OPS = {
    'conv2d': (_conv_case, 1e-6, {}),
    'batchnorm': (_batchnorm_case, 1e-5, {}),
    'sigmoid': (_sigmoid_case, 1e-6, {}),
    'silu_gate': (_silu_case, 1e-6, {}),
    'fslconv': (_fslconv_case, 1e-5, {'step': 5e-4, 'richardson': True}),
    'snir': (_snir_case, 1e-5, {}),
    'lapm_texture': (_texture_case, 1e-6, {'richardson': True}),
}


def gradient_case(op, seed, perturb=False):
    """
    Forward, backward and inputs of one randomised gradient check.

    With ``perturb`` the analytic gradients are scaled by
    :data:`PERTURB_FACTOR`, which the check must catch.
    """
    make_case = GRADIENT_OPS[op][0]
    forward, backward, inputs = make_case(np.random.default_rng(seed), seed)
    if perturb:
        exact_backward = backward

        def backward(g, **kwargs):
            return {k: PERTURB_FACTOR * np.asarray(v)
                    for k, v in exact_backward(g, **kwargs).items()}

    return forward, backward, inputs


def gradient_suite(op, seeds=20, perturb=None):
    """Worst finite-difference error of ``op`` over ``seeds`` random cases."""
    if op not in GRADIENT_OPS:
        raise ValueError("unknown op {!r}; choose from {}".format(
            op, ', '.join(GRADIENT_OPS)))
    _, tolerance, options = GRADIENT_OPS[op]
    worst = 0.
    for seed in range(seeds):
        forward, backward, inputs = gradient_case(op, seed,
                                                  perturb=(perturb == op))
        worst = max(worst, finite_diff_check(forward, backward, inputs,
                                             seed=seed, **options))
    detail = '{} seeds'.format(seeds)
    if perturb == op:
        detail += ', analytic gradient perturbed'
    return _row('gradient:' + op, worst, tolerance, detail)


def _oracle_moments(p):
    def pdf(x):
        return norm.pdf(x, p.loc, p.scale)

    mass = quad(pdf, p.lower, p.upper)[0]
    mean = quad(lambda x: x * pdf(x), p.lower, p.upper)[0] / mass
    var = quad(lambda x: (x - mean) ** 2 * pdf(x), p.lower, p.upper)[0] / mass
    return mean, np.sqrt(var)


def sampler_suite(n=100000, seed=0):
    """Truncated-normal draws against quadrature moments."""
    p = TruncNormParams(loc=40., scale=10., lower=25., upper=70.)
    draws = truncnorm_sample(p, np.random.default_rng(seed), n)
    mean, std = _oracle_moments(p)
    outside = int(np.sum((draws < p.lower) | (draws > p.upper)))
    return [
        _row('sampler:bounds', outside, 0, '{} draws'.format(n)),
        _row('sampler:mean', abs(draws.mean() - mean) / p.scale, 0.05,
             'oracle mean {:.4f}'.format(mean)),
        _row('sampler:std', abs(draws.std() - std) / std, 0.05,
             'oracle std {:.4f}'.format(std)),
    ]


def degrade_suite(n_images=20, seed=0):
    """
    Identity degradation and colour-ratio conservation.

    Pixels whose adjusted intensities are all zero carry no proportions and
    are left out of the conservation check.
    """
    rng = np.random.default_rng(seed)
    cfg = DegradeConfig(seed=seed)
    differing = 0
    for i in range(n_images):
        img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        same = summarize_corpus([channel_mean_std(img)])
        out = degrade_image(img, same, cfg, 'identity/{}.png'.format(i))
        differing += int(np.sum(out != img))

    worst = 0.
    corrected_pixels = 0
    for _ in range(n_images):
        img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        img[..., rng.integers(3)] //= 8
        target = TargetSample(tuple(rng.uniform(5., 60., 3)),
                              tuple(rng.uniform(2., 40., 3)))
        adjusted = linear_transform(img, channel_mean_std(img), target, cfg)
        ratios_orig = color_ratios(img, cfg.epsilon)
        mask = consistency_mask(ratios_orig,
                                color_ratios(adjusted, cfg.epsilon),
                                cfg.tau_color)
        corrected = corrected_values(adjusted, ratios_orig, mask)
        keep = (mask == 1) & (adjusted.sum(axis=2) > 0)
        corrected_pixels += int(keep.sum())
        if keep.any():
            drift = np.abs(color_ratios(corrected, cfg.epsilon)
                           - ratios_orig)[keep]
            worst = max(worst, float(drift.max()))
    return [
        _row('degrade:identity', differing, 0,
             '{} images, targets equal to source'.format(n_images)),
        _row('degrade:colour-ratios', worst, 1e-6,
             '{} corrected pixels'.format(corrected_pixels)),
    ]


def cost_suite(hw=3):
    """Closed-form counts against the instrumented naive convolution."""
    count_mismatch = increment_mismatch = cases = 0
    for c1 in (2, 4, 8):
        for c2 in (2, 4, 8):
            for k in (1, 3):
                dense = LayerSpec(c1, c2, k, k, hw, hw)
                for g in (1, 2, 4):
                    if c1 % g or c2 % g:
                        continue
                    cases += 1
                    grouped = LayerSpec(c1, c2, k, k, hw, hw, groups=g)
                    if count_conv_ops(grouped)['total'] != \
                            conv_flops_grouped(grouped):
                        count_mismatch += 1
                    if (flops_increment(dense, g)
                            != conv_flops_grouped(dense, g)
                            - conv_flops(dense)
                            or macs_increment(dense, g)
                            != conv_macs_grouped(dense, g)
                            - conv_macs(dense)):
                        increment_mismatch += 1
    detail = '{} grid specs'.format(cases)
    return [_row('cost:naive-count', count_mismatch, 0, detail),
            _row('cost:increments', increment_mismatch, 0, detail)]


def lapm_suite(n_images=50, seed=0):
    """Parameter budget and mask monotonicity in the dilation factor."""
    rng = np.random.default_rng(seed)
    flips = 0
    for _ in range(n_images):
        img = rng.uniform(0., 0.01, (32, 32, 3))
        low = photosensitive_mask(img, LapmConfig(lam=8., levels=3))
        high = photosensitive_mask(img, LapmConfig(lam=12., levels=3))
        for m_low, m_high in zip([low] + mask_pyramid(low, 3),
                                 [high] + mask_pyramid(high, 3)):
            flips += int(np.sum((m_low == 1) & (m_high == 0)))
    n_params = LapmParams().n_parameters
    return [_row('lapm:parameters', abs(n_params - 4), 0,
                 '{} trainable scalars'.format(n_params)),
            _row('lapm:monotonicity', flips, 0,
                 '{} images, lambda 8 vs 12'.format(n_images))]


def snir_suite(n_cases=20, seed=0):
    """Activation conservation, the gate bound and the neutral gate."""
    rng = np.random.default_rng(seed)
    conservation = neutral = 0.
    violations = 0
    for i in range(n_cases):
        scale = 1 + i % 3
        x = rng.standard_normal((1, 3, 5, 4))
        p = SnirParams(rng.standard_normal((3, 3, 1, 1)),
                       rng.standard_normal(3), scale=scale)
        u = p.alpha * nearest_upsample(x, scale)
        conservation = max(conservation, abs(u.sum() - x.sum())
                           / max(1., abs(x.sum())))
        y = snir_forward(x, p)
        nonzero = u != 0.
        violations += int(np.sum(np.abs(y[nonzero]) >= np.abs(u[nonzero])))
        zero = SnirParams(np.zeros((3, 3, 1, 1)), np.zeros(3), scale=scale)
        neutral = max(neutral, float(np.max(np.abs(
            avg_pool(snir_forward(x, zero), scale) - 0.5 * zero.alpha * x))))
    detail = '{} cases, scales 1-3'.format(n_cases)
    return [_row('snir:conservation', conservation, 1e-9, detail),
            _row('snir:gate-bound', violations, 0, detail),
            _row('snir:neutral-gate', neutral, 1e-12, detail)]


def run_battery(seeds=20, perturb=None):
    """
    Run every suite.

    Parameters
    ----------
    seeds : int, optional
        Random cases per gradient check
    perturb : str, optional
        Name of an op in :data:`GRADIENT_OPS` whose analytic gradient is
        deliberately scaled, as a negative control

    Returns
    -------
    report : pandas.DataFrame
        One row per check
    """
    if perturb is not None and perturb not in GRADIENT_OPS:
        raise ValueError("cannot perturb unknown op {!r}".format(perturb))
    rows = []
    for op in GRADIENT_OPS:
        start = time.perf_counter()
        rows.append(gradient_suite(op, seeds=seeds, perturb=perturb))
        logger.info("gradient check %s: max error %.3g (%.1f s)", op,
                    rows[-1]['max_error'], time.perf_counter() - start)
    for suite in (sampler_suite, degrade_suite, cost_suite, lapm_suite,
                  snir_suite):
        rows.extend(suite())
        logger.info("%s done", suite.__name__)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def assert_passed(report):
    """Raise :class:`VerificationError` naming every failed check."""
    failed = report.loc[~report.passed, 'name'].tolist()
    if failed:
        raise VerificationError("failed checks: {}".format(', '.join(failed)))
