import numpy as np
import pytest
from pytest import fixture, mark
from scipy.integrate import quad
from scipy.stats import norm

from darkforge.errors import DataError
from darkforge.image_stats import (ChannelStats, channel_mean_std,
                                   summarize_corpus)
from darkforge.degrade import (TruncNormParams, TargetSample, DegradeConfig,
                               target_distributions, truncnorm_sample,
                               sample_targets, linear_transform,
                               color_ratios, consistency_mask,
                               corrected_values, apply_correction,
                               stream_seed, degrade_image,
                               passthrough_annotations)


@fixture(scope='module')
def dark_summary():
    rng = np.random.default_rng(5)
    stats = [tuple(ChannelStats(m, s) for m, s in
                   zip(rng.uniform(20., 50., 3), rng.uniform(5., 15., 3)))
             for _ in range(30)]
    return summarize_corpus(stats)


def _oracle(p):
    pdf = lambda x: norm.pdf(x, p.loc, p.scale)  # noqa
    mass = quad(pdf, p.lower, p.upper)[0]
    mean = quad(lambda x: x * pdf(x), p.lower, p.upper)[0] / mass
    var = quad(lambda x: (x - mean) ** 2 * pdf(x), p.lower, p.upper)[0] / mass
    return mean, np.sqrt(var)


@mark.timeout(30)
@mark.parametrize('p', [TruncNormParams(40., 10., 25., 70.),
                        TruncNormParams(20., 8.165, 10., 30.),
                        TruncNormParams(8., 3., 7.5, 20.),
                        TruncNormParams(100., 25., 10., 105.)])
def test_truncnorm_against_quadrature(p):
    draws = truncnorm_sample(p, np.random.default_rng(0), 100000)
    mean, std = _oracle(p)
    assert draws.min() >= p.lower and draws.max() <= p.upper
    assert abs(draws.mean() - mean) <= 0.05 * p.scale
    assert draws.std() == pytest.approx(std, rel=0.05)


def test_truncnorm_degenerate():
    rng = np.random.default_rng(0)
    assert truncnorm_sample(TruncNormParams(3., 0., 1., 5.), rng) == 3.
    assert truncnorm_sample(TruncNormParams(3., 2., 3., 3.), rng) == 3.
    assert (truncnorm_sample(TruncNormParams(3., 0., 1., 5.), rng,
                             4) == 3.).all()


def test_truncnorm_reversed_bounds():
    with pytest.raises(ValueError):
        TruncNormParams(3., 1., 5., 1.)


def test_target_distributions(dark_summary):
    dists = target_distributions(dark_summary)
    mean_r, std_r = dists['R']
    assert mean_r.loc == dark_summary.R.mean_median
    assert mean_r.scale == dark_summary.R.mean_spread
    assert (std_r.lower, std_r.upper) == (dark_summary.R.std_min,
                                          dark_summary.R.std_max)


def test_sample_targets_within_bounds(dark_summary):
    rng = np.random.default_rng(1)
    for _ in range(50):
        t = sample_targets(dark_summary, rng)
        for c, channel in enumerate('RGB'):
            s = dark_summary[channel]
            assert s.mean_min <= t.target_mean[c] <= s.mean_max
            assert s.std_min <= t.target_std[c] <= s.std_max


def test_sample_targets_deterministic(dark_summary):
    a = sample_targets(dark_summary, np.random.default_rng(9))
    b = sample_targets(dark_summary, np.random.default_rng(9))
    assert a == b


def test_linear_transform_example():
    img = np.array([[[200, 200, 200], [0, 0, 0], [255, 255, 255]]],
                   dtype=np.uint8)
    out = linear_transform(img, (ChannelStats(150., 50.),) * 3,
                           TargetSample((30.,) * 3, (10.,) * 3),
                           DegradeConfig())
    assert out[0, :, 0].tolist() == [40, 0, 51]


def test_linear_transform_constant_channel():
    img = np.full((3, 3, 3), 77, dtype=np.uint8)
    out = linear_transform(img, channel_mean_std(img),
                           TargetSample((20.4, 300., -5.), (4., 4., 4.)),
                           DegradeConfig())
    assert (out[..., 0] == 20).all()
    assert (out[..., 1] == 255).all()
    assert (out[..., 2] == 0).all()


@mark.timeout(30)
def test_linear_transform_fidelity():
    rng = np.random.default_rng(3)
    cfg = DegradeConfig()
    for _ in range(100):
        img = rng.integers(100, 157, (32, 32, 3), dtype=np.uint8)
        target = TargetSample(tuple(rng.uniform(60., 190., 3)),
                              tuple(rng.uniform(5., 20., 3)))
        out = linear_transform(img, channel_mean_std(img), target, cfg)
        assert 0 < out.min() and out.max() < 255
        for c, s in enumerate(channel_mean_std(out)):
            assert abs(s.mean - target.target_mean[c]) <= 0.5
            assert abs(s.std - target.target_std[c]) <= 0.5


@mark.timeout(30)
def test_identity_degradation():
    rng = np.random.default_rng(4)
    cfg = DegradeConfig(seed=17)
    for i in range(100):
        img = rng.integers(0, 256, (12, 9, 3), dtype=np.uint8)
        same = summarize_corpus([channel_mean_std(img)])
        out = degrade_image(img, same, cfg, 'img{}.png'.format(i))
        assert np.array_equal(out, img)


@mark.timeout(30)
def test_colour_ratio_conservation():
    rng = np.random.default_rng(6)
    cfg = DegradeConfig()
    corrected_pixels = 0
    for _ in range(50):
        img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        img[..., rng.integers(3)] //= 10
        target = TargetSample(tuple(rng.uniform(5., 80., 3)),
                              tuple(rng.uniform(2., 50., 3)))
        adjusted = linear_transform(img, channel_mean_std(img), target, cfg)
        ratios = color_ratios(img, cfg.epsilon)
        mask = consistency_mask(ratios, color_ratios(adjusted, cfg.epsilon),
                                cfg.tau_color)
        corrected = corrected_values(adjusted, ratios, mask)
        keep = (mask == 1) & (adjusted.sum(axis=2) > 0)
        corrected_pixels += keep.sum()
        drift = np.abs(color_ratios(corrected, cfg.epsilon) - ratios)[keep]
        assert drift.size == 0 or drift.max() < 1e-6
        assert np.array_equal(corrected[mask == 0], adjusted[mask == 0])
    assert corrected_pixels > 0


def test_color_ratios_sum_to_one():
    img = np.random.default_rng(0).integers(1, 256, (5, 5, 3),
                                            dtype=np.uint8)
    assert np.allclose(color_ratios(img).sum(axis=2), 1.)
    assert (color_ratios(np.zeros((1, 1, 3))) == 0.).all()


def test_consistency_mask_is_strict():
    ro = np.array([[[0.75, 0.125, 0.125]]])
    ra = np.array([[[0.25, 0.375, 0.375]]])
    assert consistency_mask(ro, ra, 0.5)[0, 0] == 0
    assert consistency_mask(ro, ra, 0.4999)[0, 0] == 1
    with pytest.raises(ValueError):
        consistency_mask(ro, np.zeros((2, 1, 3)), 0.5)


def test_apply_correction_example():
    out = apply_correction(np.array([[[10, 40, 10]]], dtype=np.uint8),
                           np.array([[[0.25, 0.5, 0.25]]]),
                           np.ones((1, 1), dtype=np.uint8))
    assert out[0, 0].tolist() == [15, 30, 15]


def test_stream_seed():
    assert stream_seed(1, 'a/b.png') == stream_seed(1, 'a/b.png')
    assert stream_seed(1, 'a/b.png') != stream_seed(2, 'a/b.png')
    assert stream_seed(1, 'a/b.png') != stream_seed(1, 'b.png')
    assert 0 <= stream_seed(2 ** 64 - 1, 'x') < 2 ** 64


def test_degrade_image_deterministic(dark_summary):
    img = np.random.default_rng(2).integers(0, 256, (16, 16, 3),
                                            dtype=np.uint8)
    cfg = DegradeConfig(seed=8)
    a = degrade_image(img, dark_summary, cfg, 'x.png')
    b = degrade_image(img, dark_summary, cfg, 'x.png')
    c = degrade_image(img, dark_summary, cfg, 'y.png')
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.dtype == np.uint8 and a.shape == img.shape


@mark.timeout(60)
def test_degrade_image_darkens_every_channel(dark_summary):
    # the dark profile's mean bounds sit below 50, the inputs' above 120
    assert max(dark_summary[c].mean_max for c in 'RGB') < 120.
    rng = np.random.default_rng(3)
    cfg = DegradeConfig(seed=11)
    for i in range(100):
        shape = tuple(rng.integers(4, 24, 2)) + (3,)
        img = rng.integers(120, 221, shape, dtype=np.uint8)
        out = degrade_image(img, dark_summary, cfg, 'img{}.png'.format(i))
        before = channel_mean_std(img)
        after = channel_mean_std(out)
        for c in range(3):
            assert after[c].mean <= before[c].mean


def test_degrade_details(dark_summary):
    img = np.random.default_rng(4).integers(0, 256, (8, 8, 3),
                                            dtype=np.uint8)
    cfg = DegradeConfig(seed=1)
    result = degrade_image(img, dark_summary, cfg, 'k.png',
                           return_details=True)
    assert np.array_equal(result.image,
                          degrade_image(img, dark_summary, cfg, 'k.png'))
    assert 0. <= result.corrected_fraction <= 1.
    assert result.mask.shape == (8, 8)
    assert set(result.targets.to_dict()) == {'target_mean', 'target_std'}


def test_degrade_needs_uint8(dark_summary):
    with pytest.raises(ValueError):
        degrade_image(np.zeros((2, 2, 3)), dark_summary, DegradeConfig(),
                      'k')


@mark.parametrize('kwargs', [{'tau_color': 0.}, {'tau_color': 1.},
                             {'epsilon': 0.}, {'seed': -1}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        DegradeConfig(**kwargs)


def test_config_from_file(tmp_path):
    path = tmp_path / 'degrade.yaml'
    path.write_text('tau_color: 0.3\nseed: 4\n')
    cfg = DegradeConfig.from_file(str(path))
    assert (cfg.tau_color, cfg.seed, cfg.epsilon) == (0.3, 4, 1e-8)
    assert DegradeConfig.from_file(str(path), seed=9).seed == 9
    assert DegradeConfig.from_file(str(path), seed=None).seed == 4


def test_config_unknown_key(tmp_path):
    path = tmp_path / 'degrade.yaml'
    path.write_text('tau_colour: 0.3\n')
    with pytest.raises(DataError):
        DegradeConfig.from_file(str(path))


def test_passthrough_annotations():
    doc = {'images': [{'id': 1, 'file_name': 'a.jpg', 'width': 4},
                      {'id': 2, 'file_name': 'sub/b.png', 'width': 4}],
           'annotations': [{'id': 7, 'image_id': 2, 'bbox': [1, 2, 3, 4],
                            'segmentation': [[1, 1, 2, 2, 3, 1]]}],
           'categories': [{'id': 1, 'name': 'car'}]}
    out = passthrough_annotations(doc, {'a.jpg': 'a.png',
                                        'sub/b.png': 'sub/b.png'})
    assert [im['file_name'] for im in out['images']] == ['a.png',
                                                         'sub/b.png']
    assert out['annotations'] == doc['annotations']
    assert out['categories'] == doc['categories']
    assert doc['images'][0]['file_name'] == 'a.jpg'


def test_passthrough_missing_images():
    doc = {'images': [{'id': 1, 'file_name': 'a.jpg'},
                      {'id': 2, 'file_name': 'c.jpg'}], 'annotations': []}
    with pytest.raises(DataError, match='c.jpg'):
        passthrough_annotations(doc, {'a.jpg': 'a.png'})
