"""
Analytical FLOPs and MACs accounting for standard, grouped and FSLConv
layers, the photosensitive-mask branch and whole backbones.

All counts are exact Python integers. Quantities that are not integral for a
given split (for example M(g) when g does not divide C1 C2 Kh Kw) are
returned as ``sympy.Rational``.
"""

from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd
import sympy

from .tensorkit import Conv2dParams, conv2d_naive

__all__ = ['KINDS', 'LAPM_CONVENTION', 'LAPM_PARAMETERS', 'BACKBONE_NOTES',
           'CURVE_COLUMNS',
           'LayerSpec', 'exact', 'to_jsonable', 'conv_flops',
           'conv_flops_grouped', 'flops_increment', 'conv_macs',
           'conv_macs_grouped', 'macs_increment', 'increment_curve',
           'fsl_layer_cost', 'fsl_weight_ratio', 'lapm_cost', 'layer_cost',
           'expected_output_size', 'network_cost', 'backbone_layers',
           'count_conv_ops', 'conv_report']

KINDS = ('standard-conv', 'fsl-conv', 'lapm', 'upsample')

LAPM_CONVENTION = 'lapm-flops/v1: mul=1 add=1 mul-add=2 compare=1 exp=4 div=1'
LAPM_PARAMETERS = 4

# amplify (3 mul) + BT.601 luma (3 mul, 2 add) + threshold (1 compare)
_LAPM_PIXEL_FLOPS = {'amplify': 3, 'grayscale': 5, 'threshold': 1}
# 2x2 max (3 compare), w m + b (mul-add), gamma z + beta (mul-add), exp,
# 1 + e + eps (2 add), division
_LAPM_LEVEL_FLOPS = 3 + 2 + 2 + 4 + 2 + 1

BACKBONE_NOTES = ('SPPF rows are omitted: pooling only, no weights under '
                  'this convention',
                  'ConvBlock rows are counted as 1x1 standard convolutions',
                  'LAPM level rows are 2x2 stride-2 max pooling followed by '
                  'the shared gated 1x1 map')

CURVE_COLUMNS = ('g', 'F', 'M', 'F_ratio', 'M_ratio', 'marginal_gain')

_BACKBONES = {
    's': {'widths': (16, 32, 64, 128, 256), 'repeats': (1, 2, 2, 1)},
    'l': {'widths': (64, 128, 256, 512, 1024), 'repeats': (3, 6, 6, 3)},
}


@dataclass(frozen=True)
class LayerSpec:
    """
    Shape of one layer for cost accounting.

    Parameters
    ----------
    c_in, c_out : int
        Input and output channels
    kh, kw : int
        Kernel size
    h, w : int
        OUTPUT spatial size
    groups : int, optional
    kind : str, optional
        One of ``standard-conv``, ``fsl-conv``, ``lapm``, ``upsample``
    stride : int, optional
        Spatial stride; the scale factor for ``upsample`` layers
    name : str, optional
    branch : str, optional
        Layers only chain with earlier layers of the same branch
    """

    c_in: int
    c_out: int
    kh: int
    kw: int
    h: int
    w: int
    groups: int = 1
    kind: str = 'standard-conv'
    stride: int = 1
    name: str = ''
    branch: str = 'main'

    def __post_init__(self):
        for field in ('c_in', 'c_out', 'kh', 'kw', 'h', 'w', 'groups',
                      'stride'):
            value = getattr(self, field)
            if int(value) != value or value < 1:
                raise ValueError("{} must be a positive integer, got "
                                 "{}".format(field, value))
        if self.kind not in KINDS:
            raise ValueError("unknown layer kind {!r}".format(self.kind))
        if self.c_in % self.groups or self.c_out % self.groups:
            raise ValueError("groups={} must divide c_in={} and c_out={}"
                             .format(self.groups, self.c_in, self.c_out))

    @property
    def kernel_area(self):
        return self.kh * self.kw

    @property
    def out_area(self):
        return self.h * self.w

    def to_dict(self):
        return asdict(self)


def exact(numerator, denominator=1):
    """
    ``numerator / denominator`` as an int when integral, else a
    ``sympy.Rational``.

    >>> exact(6, 3), exact(-1, 2)
    (2, -1/2)
    """
    value = sympy.Rational(numerator, denominator)
    if value.is_integer:
        return int(value)
    return value


def to_jsonable(value):
    """Ints and floats pass through; rationals become ``'p/q'`` strings."""
    if isinstance(value, sympy.Basic):
        return int(value) if value.is_integer else str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _split(spec, g):
    g = spec.groups if g is None else g
    if int(g) != g or g < 1:
        raise ValueError("g must be a positive integer, got {}".format(g))
    return int(g)


def _dense_product(spec):
    return spec.c_in * spec.c_out * spec.kernel_area


def conv_flops(spec):
    """
    FLOPs of a standard convolution, ``2 C1 C2 Kh Kw H W``.

    Examples
    --------
    >>> conv_flops(LayerSpec(64, 64, 3, 3, 32, 32))
    75497472
    """
    if spec.groups != 1:
        raise ValueError("conv_flops needs groups=1; use conv_flops_grouped")
    return 2 * _dense_product(spec) * spec.out_area


def conv_flops_grouped(spec, g=None):
    """
    FLOPs of a g-way grouped convolution, ``2 (C2 / g) C1 Kh Kw H W``.

    ``g`` defaults to ``spec.groups`` and must divide both channel counts.

    >>> conv_flops_grouped(LayerSpec(64, 64, 3, 3, 32, 32), 2)
    37748736
    """
    g = _split(spec, g)
    if spec.c_in % g or spec.c_out % g:
        raise ValueError("g={} must divide c_in={} and c_out={}".format(
            g, spec.c_in, spec.c_out))
    return 2 * (spec.c_out // g) * spec.c_in * spec.kernel_area * spec.out_area


def flops_increment(spec, g):
    """
    FLOPs increment of a g-way split, ``2 ((1 - g) / g) C1 C2 Kh Kw H W``.

    >>> flops_increment(LayerSpec(64, 64, 3, 3, 32, 32), 2)
    -37748736
    """
    g = _split(spec, g)
    return exact(2 * (1 - g) * _dense_product(spec) * spec.out_area, g)


def conv_macs(spec):
    """Memory access cost ``H W (C1 + C2) + C1 C2 Kh Kw`` (output dims)."""
    return spec.out_area * (spec.c_in + spec.c_out) + _dense_product(spec)


def conv_macs_grouped(spec, g=None):
    """``H W (C1 + C2) + C1 C2 Kh Kw / g``; equals :func:`conv_macs` at g=1."""
    g = _split(spec, g)
    return exact(g * spec.out_area * (spec.c_in + spec.c_out)
                 + _dense_product(spec), g)


def macs_increment(spec, g):
    """
    MACs increment ``C1 C2 Kh Kw (1 / g - 1)``.

    >>> macs_increment(LayerSpec(64, 64, 3, 3, 32, 32), 2)
    -18432
    """
    g = _split(spec, g)
    return exact((1 - g) * _dense_product(spec), g)


def increment_curve(spec, g_values):
    """
    Tabulate F(g) and M(g) over a sequence of splits.

    Parameters
    ----------
    spec : LayerSpec
        Channel counts, kernel and output size; its ``groups`` is ignored
    g_values : sequence of int
        Strictly increasing, each >= 1

    Returns
    -------
    curve : pandas.DataFrame
        Columns ``g``, ``F``, ``M``, ``F_ratio`` (F / FLOPs of the dense
        layer), ``M_ratio`` (M / its MACs) and ``marginal_gain``
        (``|F(g_k)| - |F(g_{k-1})|``, None on the first row)
    """
    return pd.DataFrame(_curve_rows(spec, g_values), columns=list(CURVE_COLUMNS),
                        dtype=object)


def _curve_rows(spec, g_values):
    g_values = [int(g) for g in g_values]
    if not g_values:
        raise ValueError("g_values is empty")
    if g_values[0] < 1 or any(b <= a for a, b in zip(g_values,
                                                      g_values[1:])):
        raise ValueError("g_values must be strictly increasing and >= 1")
    dense = LayerSpec(**{**spec.to_dict(), 'groups': 1})
    flops, macs = conv_flops(dense), conv_macs(dense)
    rows = []
    previous = None
    for g in g_values:
        f = flops_increment(dense, g)
        m = macs_increment(dense, g)
        gain = None if previous is None else exact(abs(f)) - exact(
            abs(previous))
        rows.append({'g': g, 'F': f, 'M': m, 'F_ratio': exact(f, flops),
                     'M_ratio': exact(m, macs), 'marginal_gain': gain})
        previous = f
    return rows


def fsl_layer_cost(c1, c2, stride, h_out, w_out):
    """
    FLOPs and weight count of an FSLConv layer.

    Both 3x3 stages run at the output resolution; stage 1 maps ``c1`` to
    ``c2 / 2`` channels and stage 2 maps ``c2 / 2`` to ``c2 / 2``.

    Returns
    -------
    flops : int
    weights : int
        ``(c2 / 2) c1 9 + (c2 / 2)**2 9``

    Examples
    --------
    >>> fsl_layer_cost(8, 8, 2, 4, 4)[1]
    432
    """
    if c2 % 2 or c2 < 2:
        raise ValueError("FSLConv output channels must be even, got "
                         "{}".format(c2))
    if stride < 1:
        raise ValueError("stride must be >= 1")
    c0 = c2 // 2
    stage1 = LayerSpec(c1, c0, 3, 3, h_out, w_out, stride=stride)
    stage2 = LayerSpec(c0, c0, 3, 3, h_out, w_out)
    weights = c0 * c1 * 9 + c0 * c0 * 9
    return conv_flops(stage1) + conv_flops(stage2), weights


def fsl_weight_ratio(c1, c2):
    """FSLConv weights over a standard 3x3 convolution's, exactly."""
    return exact(fsl_layer_cost(c1, c2, 1, 1, 1)[1], c1 * c2 * 9)


def lapm_cost(h, w, levels):
    """
    FLOPs of the photosensitive-mask branch under a fixed convention.

    Full-resolution stages cost per pixel: amplification 3, luma 5 and
    threshold 1. Each pyramid level costs 14 per output pixel: the 2x2 max
    (3 compares), the 1x1 map with bias (one multiply-add), the gate
    numerator (one multiply-add), one exponential (4), the denominator (2
    adds) and the division. Level k has ``(h >> k) x (w >> k)`` pixels.

    Returns
    -------
    report : dict
        ``convention``, per-stage ``stages``, ``total`` and ``gflops``

    Examples
    --------
    >>> lapm_cost(2, 2, 1)['total']
    50
    >>> lapm_cost(640, 640, 5)['gflops']
    0.005596
    """
    if h < 1 or w < 1:
        raise ValueError("image dims must be positive")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    stages = {name: per_pixel * h * w
              for name, per_pixel in _LAPM_PIXEL_FLOPS.items()}
    for k in range(1, levels + 1):
        stages['level{}'.format(k)] = _LAPM_LEVEL_FLOPS * (h >> k) * (w >> k)
    total = sum(stages.values())
    return {'convention': LAPM_CONVENTION, 'h': h, 'w': w, 'levels': levels,
            'stages': stages, 'total': total, 'gflops': total / 1e9,
            'parameters': LAPM_PARAMETERS}


def layer_cost(spec):
    """
    FLOPs and trainable parameters of one layer.

    ``lapm`` layers with a 1x1 kernel are the full-resolution front end and
    carry the branch's four parameters; ``lapm`` layers with a 2x2 kernel
    are pyramid levels. ``upsample`` layers are gated upsampling blocks.
    """
    if spec.kind == 'standard-conv':
        params = spec.c_out * (spec.c_in // spec.groups) * spec.kernel_area
        return conv_flops_grouped(spec), params
    if spec.kind == 'fsl-conv':
        return fsl_layer_cost(spec.c_in, spec.c_out, spec.stride, spec.h,
                              spec.w)
    if spec.kind == 'lapm':
        if spec.kh == 1:
            flops = sum(_LAPM_PIXEL_FLOPS.values()) * spec.out_area
            return flops, LAPM_PARAMETERS
        return _LAPM_LEVEL_FLOPS * spec.out_area, 0
    if spec.c_in != spec.c_out:
        raise ValueError("gated upsampling keeps the channel count")
    # scale, 1x1 gate with bias, sigmoid (exp, add, div), product
    per_element = 1 + 2 * spec.c_in + 1 + 6 + 1
    return (per_element * spec.c_out * spec.out_area,
            spec.c_in * spec.c_out + spec.c_out)


def expected_output_size(spec, size):
    """Output side length implied by an input of ``size`` pixels."""
    if spec.kind == 'upsample':
        return size * spec.stride
    if spec.kind == 'lapm' and spec.kh == 2:
        return size // spec.stride
    return -(-size // spec.stride)


def network_cost(layers, input_size=None):
    """
    Per-layer and total cost of a layer sequence.

    Layers chain within their branch: each layer's ``c_in`` must equal the
    previous layer's ``c_out`` and its output size must follow from the
    previous output size and its stride. With ``input_size`` the first layer
    of every branch is checked against it.

    Returns
    -------
    table : pandas.DataFrame
        One row per layer with its spec, ``flops`` and ``params``
    totals : dict
        ``flops``, ``params``, ``n_layers`` and per-branch ``branch_flops``
    """
    rows = []
    last = {}
    for index, spec in enumerate(layers):
        label = spec.name or 'layer {}'.format(index)
        prev = last.get(spec.branch)
        if prev is not None:
            if spec.c_in != prev.c_out:
                raise ValueError("{}: c_in={} does not match the previous "
                                 "c_out={}".format(label, spec.c_in,
                                                   prev.c_out))
            sizes = (prev.h, prev.w)
        elif input_size is not None:
            sizes = (input_size, input_size)
        else:
            sizes = None
        if sizes is not None:
            expected = tuple(expected_output_size(spec, s) for s in sizes)
            if (spec.h, spec.w) != expected:
                raise ValueError("{}: output {}x{} does not follow from "
                                 "{}x{} at stride {}".format(
                                     label, spec.h, spec.w, sizes[0],
                                     sizes[1], spec.stride))
        flops, params = layer_cost(spec)
        rows.append({**spec.to_dict(), 'name': label, 'flops': flops,
                     'params': params})
        last[spec.branch] = spec
    columns = list(LayerSpec.__dataclass_fields__) + ['flops', 'params']
    table = pd.DataFrame(rows, columns=columns)
    branch_flops = {}
    for row in rows:
        branch_flops[row['branch']] = (branch_flops.get(row['branch'], 0)
                                       + row['flops'])
    totals = {'flops': sum(r['flops'] for r in rows),
              'params': sum(r['params'] for r in rows),
              'n_layers': len(rows), 'branch_flops': branch_flops}
    return table, totals


def backbone_layers(variant='s', size=640, levels=5):
    """
    Backbone of the small (``'s'``) or large (``'l'``) detector as layer
    specs: a stride-2 3x3 stem, four FSLConv stride-2 stages each followed
    by its 1x1 ConvBlocks, and the photosensitive-mask branch.

    Examples
    --------
    >>> table, totals = network_cost(backbone_layers('s'), input_size=640)
    >>> table[table.kind == 'fsl-conv'].h.tolist()
    [160, 80, 40, 20]
    """
    try:
        preset = _BACKBONES[variant]
    except KeyError:
        raise ValueError("unknown backbone variant {!r}; choose from {}"
                         .format(variant, ', '.join(sorted(_BACKBONES))))
    widths, repeats = preset['widths'], preset['repeats']
    side = -(-size // 2)
    layers = [LayerSpec(3, widths[0], 3, 3, side, side, stride=2,
                        name='stem')]
    for stage, (c_in, c_out, n) in enumerate(
            zip(widths, widths[1:], repeats), start=1):
        side = -(-side // 2)
        layers.append(LayerSpec(c_in, c_out, 3, 3, side, side, stride=2,
                                kind='fsl-conv', name='fsl{}'.format(stage)))
        layers.extend(LayerSpec(c_out, c_out, 1, 1, side, side,
                                name='convblock{}.{}'.format(stage, i))
                      for i in range(1, n + 1))
    layers.append(LayerSpec(3, 1, 1, 1, size, size, kind='lapm',
                            name='lapm', branch='lapm'))
    side = size
    for k in range(1, levels + 1):
        side //= 2
        layers.append(LayerSpec(1, 1, 2, 2, side, side, kind='lapm',
                                stride=2, name='lapm.level{}'.format(k),
                                branch='lapm'))
    return layers


def count_conv_ops(spec, seed=0):
    """
    Count the multiplies and adds of a naive loop-nest convolution with the
    shape of ``spec`` (stride 1, no padding, no bias).

    Returns
    -------
    ops : dict
        ``mul``, ``add`` and their sum ``total``
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, spec.c_in, spec.h + spec.kh - 1,
                             spec.w + spec.kw - 1))
    weight = rng.standard_normal((spec.c_out, spec.c_in // spec.groups,
                                  spec.kh, spec.kw))
    _, ops = conv2d_naive(x, Conv2dParams(weight, groups=spec.groups))
    return {**ops, 'total': ops['mul'] + ops['add']}


def conv_report(spec, g_values=(1, 2, 4, 8)):
    """
    JSON-ready cost report of one convolution layer and its split curve.

    Examples
    --------
    >>> report = conv_report(LayerSpec(64, 64, 3, 3, 32, 32))
    >>> report['flops'], report['F'], report['M']
    (75497472, 0, 0)
    """
    g = spec.groups
    dense = LayerSpec(**{**spec.to_dict(), 'groups': 1})
    records = [{k: to_jsonable(v) for k, v in row.items()}
               for row in _curve_rows(dense, g_values)]
    return {'spec': spec.to_dict(),
            'flops': conv_flops(dense),
            'flops_grouped': conv_flops_grouped(spec),
            'macs': conv_macs(dense),
            'macs_grouped': to_jsonable(conv_macs_grouped(spec)),
            'params': spec.c_out * (spec.c_in // g) * spec.kernel_area,
            'F': to_jsonable(flops_increment(dense, g)),
            'M': to_jsonable(macs_increment(dense, g)),
            'curve': records}
