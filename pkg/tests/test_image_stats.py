import numpy as np
import pytest
from pytest import fixture, mark

from darkforge.errors import DataError
from darkforge.image_stats import (ChannelStats, ChannelStatsSummary,
                                   as_rgb, to_float, to_uint8,
                                   channel_mean_std, rgb_to_gray,
                                   summarize_corpus, stats_table,
                                   summary_from_table, channel_histogram,
                                   channel_histograms, compare_summaries)


@fixture(scope='module')
def corpus():
    rng = np.random.default_rng(11)
    return [rng.integers(0, 256, (8 + i, 10, 3), dtype=np.uint8)
            for i in range(7)]


@fixture(scope='module')
def per_image(corpus):
    return [channel_mean_std(img) for img in corpus]


def test_constant_image():
    stats = channel_mean_std(np.full((4, 5, 3), 100, dtype=np.uint8))
    for s in stats:
        assert s == ChannelStats(100., 0.)


def test_two_pixel_example():
    img = np.zeros((1, 2, 3), dtype=np.uint8)
    img[0, 1, 0] = 200
    r = channel_mean_std(img)[0]
    assert (r.mean, r.std) == (100., 100.)


def test_identical_planes():
    plane = np.random.default_rng(8).integers(0, 256, (4, 4), dtype=np.uint8)
    stats = channel_mean_std(np.stack([plane] * 3, axis=2))
    assert stats[0] == stats[1] == stats[2]


def test_population_std(corpus):
    img = corpus[0]
    stats = channel_mean_std(img)
    for c in range(3):
        assert stats[c].mean == pytest.approx(img[..., c].mean())
        assert stats[c].std == pytest.approx(img[..., c].std(ddof=0))


def test_float_and_uint8_agree(corpus):
    img = corpus[1]
    as_u8 = channel_mean_std(img)
    as_f = channel_mean_std(to_float(img))
    for a, b in zip(as_u8, as_f):
        assert b.mean == pytest.approx(a.mean / 255.)
        assert b.std == pytest.approx(a.std / 255.)


def test_conversions():
    img = np.array([[[0, 128, 255]]], dtype=np.uint8)
    assert np.array_equal(to_uint8(to_float(img)), img)


@mark.parametrize('bad', [np.zeros((4, 4)), np.zeros((0, 4, 3)),
                          np.full((2, 2, 3), 1.5),
                          np.zeros((2, 2, 3), dtype=np.int32)])
def test_as_rgb_rejects(bad):
    with pytest.raises(ValueError):
        as_rgb(bad)


@mark.parametrize('rgb, expected', [((1., 0., 0.), 0.299),
                                    ((0., 1., 0.), 0.587),
                                    ((0., 0., 1.), 0.114),
                                    ((1., 1., 1.), 1.),
                                    ((.5, .5, .5), .5)])
def test_rgb_to_gray(rgb, expected):
    gray = rgb_to_gray(np.array([[rgb]]))
    assert gray[0, 0] == pytest.approx(expected)


def test_rgb_to_gray_needs_float():
    with pytest.raises(ValueError):
        rgb_to_gray(np.zeros((2, 2, 3), dtype=np.uint8))


def test_summary_permutation_invariant(per_image):
    forward = summarize_corpus(per_image)
    backward = summarize_corpus(per_image[::-1])
    assert forward == backward
    assert forward.n_images == len(per_image)


def test_summary_three_images():
    stats = [(ChannelStats(m, 1.),) * 3 for m in (30., 10., 20.)]
    r = summarize_corpus(stats).R
    assert (r.mean_median, r.mean_min, r.mean_max) == (20., 10., 30.)
    assert r.mean_spread == pytest.approx(np.sqrt(200. / 3.))
    assert r.mean_spread == pytest.approx(8.1650, abs=1e-4)


def test_summary_even_median():
    stats = [(ChannelStats(m, 2. * m),) * 3 for m in (1., 2., 3., 10.)]
    r = summarize_corpus(stats).R
    assert r.mean_median == 2.5
    assert r.std_median == 5.
    assert (r.mean_min, r.mean_max) == (1., 10.)
    assert r.mean_spread == pytest.approx(np.std([1., 2., 3., 10.]))


def test_single_image_summary_is_degenerate(per_image):
    s = summarize_corpus(per_image[:1]).G
    assert s.mean_spread == 0. and s.std_spread == 0.
    assert s.mean_min == s.mean_median == s.mean_max


def test_empty_corpus():
    with pytest.raises(ValueError):
        summarize_corpus([])


def test_summary_dict(per_image):
    summary = summarize_corpus(per_image)
    doc = summary.to_dict()
    assert set(doc) == {'R', 'G', 'B', 'n_images', 'schema_version'}
    assert ChannelStatsSummary.from_dict(doc) == summary


def test_summary_from_bad_dict(per_image):
    doc = summarize_corpus(per_image).to_dict()
    del doc['B']
    with pytest.raises(DataError):
        ChannelStatsSummary.from_dict(doc)


def test_stats_table(per_image):
    keys = ['img{}.png'.format(i) for i in range(len(per_image))]
    table = stats_table(keys, per_image)
    assert list(table.columns) == ['file', 'mean_R', 'mean_G', 'mean_B',
                                   'std_R', 'std_G', 'std_B']
    assert table.mean_G[2] == per_image[2][1].mean
    assert summary_from_table(table) == summarize_corpus(per_image)


def test_histograms(corpus):
    counts = channel_histogram(corpus[0])
    assert counts.shape == (256, 3)
    assert (counts.sum(axis=0) == corpus[0].shape[0]
            * corpus[0].shape[1]).all()
    table = channel_histograms(channel_histogram(img) for img in corpus)
    assert list(table.columns) == ['bin', 'R', 'G', 'B']
    assert table.R.sum() == sum(img.shape[0] * img.shape[1]
                                for img in corpus)


def test_compare_summaries():
    bright = summarize_corpus([(ChannelStats(150., 40.),) * 3])
    dark = summarize_corpus([(ChannelStats(30., 10.),) * 3])
    shift = compare_summaries(bright, dark)
    assert list(shift.index) == ['R', 'G', 'B']
    assert (shift.mean_shift == -120.).all()
    assert (shift.std_shift == -30.).all()
