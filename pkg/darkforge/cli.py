"""
Command-line interface.

Subcommands: ``stats``, ``degrade``, ``lapm``, ``cost`` and ``check``. Exit
codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""

import argparse
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import dataclass, field, asdict

import dask
import numpy as np

from . import __version__
from .costmodel import (BACKBONE_NOTES, LayerSpec, backbone_layers,
                        conv_report, fsl_layer_cost, fsl_weight_ratio,
                        increment_curve, lapm_cost, network_cost,
                        to_jsonable)
from .degrade import DegradeConfig, degrade_image, passthrough_annotations
from .errors import DarkforgeError, DataError, UsageError
from .fslconv import standard_weight_count
from .image_stats import (SCHEMA_VERSION, ChannelStatsSummary,
                          channel_histogram, channel_histograms,
                          channel_mean_std, stats_table, summarize_corpus)
from .io import (file_sha256, list_images, load_image, load_params,
                 read_json, save_image, write_json, write_tensor)
from .lapm import LapmConfig, LapmParams, lapm_pyramid, min_image_size
from .verify import GRADIENT_OPS, assert_passed, run_battery

__all__ = ['RunManifest', 'resolve_jobs', 'output_key', 'build_parser',
           'cmd_stats', 'cmd_degrade', 'cmd_lapm', 'cmd_cost', 'cmd_check',
           'main']

logger = logging.getLogger(__name__)

JOBS_ENV = 'DARKFORGE_JOBS'


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports bad usage as :class:`UsageError`."""

    def error(self, message):
        raise UsageError('{}: {}'.format(self.prog, message))


@dataclass
class RunManifest:
    """Record of one corpus run, enough to replay and verify it."""

    command: list
    config: dict
    seed: int = None
    images: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    annotations: str = 'none'
    duration_s: float = 0.
    tool_version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        write_json(path, self.to_dict())


def resolve_jobs(jobs=None):
    """Worker count: the flag, else ``DARKFORGE_JOBS``, else the CPU count."""
    if jobs is None:
        env = os.environ.get(JOBS_ENV)
        if env:
            try:
                jobs = int(env)
            except ValueError:
                raise UsageError("{}={!r} is not an integer".format(JOBS_ENV,
                                                                   env))
        else:
            jobs = os.cpu_count() or 1
    if jobs < 1:
        raise UsageError("jobs must be >= 1, got {}".format(jobs))
    return jobs


def _map(func, items, jobs):
    """Apply ``func`` to every item with dask, keeping input order."""
    tasks = [dask.delayed(func)(item) for item in items]
    if jobs == 1:
        return list(dask.compute(*tasks, scheduler='sync'))
    return list(dask.compute(*tasks, scheduler='threads', num_workers=jobs))


def output_key(key):
    """Relative output path of a degraded image: same path, PNG suffix."""
    return os.path.splitext(key)[0] + '.png'


def _sidecar(path, suffix):
    return os.path.splitext(path)[0] + suffix


def _is_within(path, root):
    path, root = os.path.realpath(path), os.path.realpath(root)
    return path == root or os.path.commonpath([path, root]) == root


def cmd_stats(args):
    """Per-channel statistics of a corpus."""
    start = time.perf_counter()
    jobs = resolve_jobs(args.jobs)
    keys = list_images(args.in_dir)

    def measure(key):
        try:
            img = load_image(os.path.join(args.in_dir, key))
        except DataError as exc:
            logger.warning("skipping %s", exc)
            return None
        return channel_mean_std(img), channel_histogram(img)

    results = _map(measure, keys, jobs)
    kept = [(k, r) for k, r in zip(keys, results) if r is not None]
    skipped = [k for k, r in zip(keys, results) if r is None]
    if not kept:
        raise DataError("no decodable images in {}".format(args.in_dir))
    per_image = [r[0] for _, r in kept]
    summary = summarize_corpus(per_image)
    write_json(args.out, summary.to_dict())
    stats_table([k for k, _ in kept], per_image).to_csv(
        _sidecar(args.out, '.images.csv'), index=False)
    histograms = channel_histograms(r[1] for _, r in kept)
    histograms.to_csv(_sidecar(args.out, '.hist.csv'), index=False)
    if args.plot:
        from .plotting import plot_channel_histograms
        plot_channel_histograms(histograms, title=args.in_dir).savefig(
            args.plot)
    RunManifest(command=['darkforge'] + args.argv,
                config={'in_dir': args.in_dir, 'jobs': jobs},
                images=[{'key': k} for k, _ in kept], skipped=skipped,
                duration_s=time.perf_counter() - start).write(
                    _sidecar(args.out, '.manifest.json'))
    logger.info("summarised %d images (%d skipped) into %s", len(kept),
                len(skipped), args.out)
    return 0


def _drop_skipped(doc, skipped_outputs):
    """Remove image records, and their annotations, for skipped images."""
    if not skipped_outputs:
        return doc
    dropped = {image.get('id') for image in doc['images']
               if image['file_name'] in skipped_outputs}
    logger.warning("dropping annotations of %d skipped images",
                   len(dropped))
    doc = dict(doc)
    doc['images'] = [image for image in doc['images']
                     if image.get('id') not in dropped]
    doc['annotations'] = [ann for ann in doc.get('annotations', [])
                          if ann.get('image_id') not in dropped]
    return doc


def cmd_degrade(args):
    """Degrade a well-lit corpus towards a low-light profile."""
    start = time.perf_counter()
    if _is_within(args.out_dir, args.in_dir):
        raise UsageError("output directory {} must not lie inside the input "
                         "directory {}".format(args.out_dir, args.in_dir))
    if (args.annotations_in is None) != (args.annotations_out is None):
        raise UsageError("--annotations-in and --annotations-out go together")
    jobs = resolve_jobs(args.jobs)
    summary = ChannelStatsSummary.from_dict(read_json(args.stats))
    if args.config:
        cfg = DegradeConfig.from_file(args.config, seed=args.seed)
    else:
        cfg = DegradeConfig(seed=0 if args.seed is None else args.seed)
    keys = list_images(args.in_dir)
    if not keys:
        raise DataError("no images in {}".format(args.in_dir))
    outputs = {}
    for key in keys:
        out = output_key(key)
        if out in outputs:
            raise DataError("{} and {} both map to {}".format(
                outputs[out], key, out))
        outputs[out] = key
    annotation_doc = None
    if args.annotations_in:
        annotation_doc = passthrough_annotations(
            read_json(args.annotations_in),
            {key: out for out, key in outputs.items()})

    def degrade_one(key):
        try:
            img = load_image(os.path.join(args.in_dir, key))
        except DataError as exc:
            logger.warning("skipping %s", exc)
            return None
        result = degrade_image(img, summary, cfg, key, return_details=True)
        path = os.path.join(args.out_dir, output_key(key))
        save_image(path, result.image)
        return {'key': key, 'output': output_key(key),
                'sha256': file_sha256(path),
                'corrected_fraction': result.corrected_fraction,
                **result.targets.to_dict()}

    results = _map(degrade_one, keys, jobs)
    images = [r for r in results if r is not None]
    skipped = [k for k, r in zip(keys, results) if r is None]
    if not images:
        raise DataError("no decodable images in {}".format(args.in_dir))

    annotations = 'none'
    if annotation_doc is not None:
        write_json(args.annotations_out, _drop_skipped(
            annotation_doc, {output_key(key) for key in skipped}))
        annotations = args.annotations_out

    RunManifest(command=['darkforge'] + args.argv, config=cfg.to_dict(),
                seed=cfg.seed, images=images, skipped=skipped,
                annotations=annotations,
                duration_s=time.perf_counter() - start).write(
                    os.path.join(args.out_dir, 'manifest.json'))
    logger.info("degraded %d images into %s (%d skipped)", len(images),
                args.out_dir, len(skipped))
    return 0


def cmd_lapm(args):
    """Photosensitive masks and texture planes of one image."""
    cfg = LapmConfig(lam=args.lam, tau_photon=args.tau, eps=args.eps,
                     levels=args.levels)
    params = LapmParams()
    if args.params:
        loaded = load_params(args.params)
        unknown = sorted(set(loaded) - set(params.parameters()))
        if unknown:
            raise DataError("unknown LAPM parameters in {}: {}".format(
                args.params, ', '.join(unknown)))
        params = params.with_parameters(loaded)
    img = load_image(args.image)
    size = min_image_size(cfg.levels)
    if min(img.shape[:2]) < size:
        raise DataError("{} levels need an image of at least {}x{}; {} is "
                        "{}x{}".format(cfg.levels, size, size, args.image,
                                       img.shape[0], img.shape[1]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always')
        features, masks = lapm_pyramid(img, cfg, params, return_masks=True)
    for w in caught:
        logger.warning("%s", w.message)
    levels = []
    for k, (feature, mask) in enumerate(zip(features, masks), start=1):
        save_image(os.path.join(args.out_dir, 'mask_level{}.png'.format(k)),
                   (mask * 255).astype(np.uint8))
        write_tensor(os.path.join(args.out_dir,
                                  'texture_level{}.f64'.format(k)), feature)
        levels.append({'level': k, 'shape': list(mask.shape),
                       'mask_fraction': float(mask.mean())})
    write_json(os.path.join(args.out_dir, 'lapm.json'),
               {'schema_version': SCHEMA_VERSION, 'image': args.image,
                'config': cfg.to_dict(), 'parameters': params.parameters(),
                'n_parameters': params.n_parameters, 'levels': levels})
    logger.info("wrote %d levels to %s", len(levels), args.out_dir)
    return 0


def _parse_g_values(text):
    try:
        return [int(g) for g in text.split(',')]
    except ValueError:
        raise UsageError("--curve expects comma-separated integers, got "
                         "{!r}".format(text))


def _cost_conv(args):
    h, w = _size(args)
    spec = LayerSpec(args.c1, args.c2, args.kh or args.k, args.kw or args.k,
                     h, w, groups=args.g)
    g_values = _parse_g_values(args.curve)
    report = conv_report(spec, g_values)
    if args.csv:
        increment_curve(spec, g_values).to_csv(args.csv, index=False)
    if args.plot:
        from .plotting import plot_increment_curve
        plot_increment_curve(increment_curve(spec, g_values)).savefig(
            args.plot)
    return report


def _cost_fsl(args):
    flops, weights = fsl_layer_cost(args.c1, args.c2, args.stride,
                                    *_size(args))
    ratio = fsl_weight_ratio(args.c1, args.c2)
    return {'c1': args.c1, 'c2': args.c2, 'stride': args.stride,
            'flops': flops, 'weights': weights,
            'standard_weights': standard_weight_count(args.c1, args.c2),
            'weight_ratio': float(ratio),
            'weight_ratio_exact': to_jsonable(ratio)}


def _cost_lapm(args):
    return lapm_cost(*_size(args), args.levels)


def _cost_network(args):
    table, totals = network_cost(
        backbone_layers(args.variant, args.size, args.levels),
        input_size=args.size)
    if args.csv:
        table.to_csv(args.csv, index=False)
    return {'variant': args.variant, 'size': args.size, 'totals': totals,
            'gflops': totals['flops'] / 1e9, 'notes': list(BACKBONE_NOTES),
            'layers': [{k: to_jsonable(v) for k, v in row.items()}
                       for row in table.to_dict(orient='records')]}


def cmd_cost(args):
    """Analytical cost reports as JSON."""
    try:
        report = args.cost_func(args)
    except ValueError as exc:
        if isinstance(exc, DarkforgeError):
            raise
        raise UsageError(str(exc))
    report['schema_version'] = SCHEMA_VERSION
    if args.out:
        write_json(args.out, report)
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write('\n')
    return 0


def cmd_check(args):
    """Run the verification battery."""
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    report = run_battery(seeds=args.seeds, perturb=args.perturb)
    sys.stdout.write(report.to_string(index=False) + '\n')
    if args.out:
        report.to_csv(args.out, index=False)
    assert_passed(report)
    return 0


def _add_size(parser):
    parser.add_argument('--hw', type=int, help='output height and width')
    parser.add_argument('--h', type=int, help='output height (overrides --hw)')
    parser.add_argument('--w', type=int, help='output width (overrides --hw)')
    parser.add_argument('--out', help='write the JSON report here instead of '
                                      'stdout')


def _size(args):
    h, w = args.h or args.hw, args.w or args.hw
    if h is None or w is None:
        raise UsageError("give the output size with --hw or --h and --w")
    return h, w


def build_parser():
    parser = _Parser(prog='darkforge',
                     description='Low-light corpus synthesis, light-adaptive '
                                 'masks and lightweight-layer cost analysis.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='log debug messages')
    parser.add_argument('-q', '--quiet', action='store_true',
                        help='log warnings and errors only')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('stats', help='per-channel corpus statistics')
    p.add_argument('in_dir')
    p.add_argument('out', help='summary JSON; CSV and manifest files are '
                               'written next to it')
    p.add_argument('--plot', help='write the RGB histogram figure here')
    p.add_argument('--jobs', type=int)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser('degrade', help='synthesise a low-light corpus')
    p.add_argument('in_dir')
    p.add_argument('out_dir')
    p.add_argument('--stats', required=True,
                   help='low-light summary JSON from `darkforge stats`')
    p.add_argument('--seed', type=int)
    p.add_argument('--config', help='YAML file with DegradeConfig values')
    p.add_argument('--annotations-in')
    p.add_argument('--annotations-out')
    p.add_argument('--jobs', type=int)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser('lapm', help='photosensitive masks of one image')
    p.add_argument('image')
    p.add_argument('out_dir')
    p.add_argument('--lambda', dest='lam', type=float, default=8.)
    p.add_argument('--tau', type=float, default=0.02)
    p.add_argument('--eps', type=float, default=1e-8)
    p.add_argument('--levels', type=int, default=5)
    p.add_argument('--params', help='parameter bundle with w, bias, gamma '
                                    'and beta')
    p.set_defaults(func=cmd_lapm)

    p = sub.add_parser('cost', help='FLOPs / MACs reports')
    kinds = p.add_subparsers(dest='kind', metavar='kind')
    kinds.required = True
    p.set_defaults(func=cmd_cost)

    k = kinds.add_parser('conv', help='standard or grouped convolution')
    k.add_argument('--c1', type=int, required=True)
    k.add_argument('--c2', type=int, required=True)
    k.add_argument('--k', type=int, default=3)
    k.add_argument('--kh', type=int)
    k.add_argument('--kw', type=int)
    _add_size(k)
    k.add_argument('--g', type=int, default=1)
    k.add_argument('--curve', default='1,2,4,8',
                   help='comma-separated splits for the F(g)/M(g) curve')
    k.add_argument('--csv', help='write the curve as CSV')
    k.add_argument('--plot', help='write the curve figure')
    k.set_defaults(cost_func=_cost_conv)

    k = kinds.add_parser('fsl', help='FSLConv layer')
    k.add_argument('--c1', type=int, required=True)
    k.add_argument('--c2', type=int, required=True)
    k.add_argument('--stride', type=int, default=1)
    _add_size(k)
    k.set_defaults(cost_func=_cost_fsl)

    k = kinds.add_parser('lapm', help='photosensitive-mask branch')
    _add_size(k)
    k.add_argument('--levels', type=int, default=5)
    k.set_defaults(cost_func=_cost_lapm)

    k = kinds.add_parser('network', help='backbone preset')
    k.add_argument('--variant', choices=['s', 'l'], default='s')
    k.add_argument('--size', type=int, default=640)
    k.add_argument('--levels', type=int, default=5)
    k.add_argument('--csv', help='write the per-layer table as CSV')
    k.add_argument('--out', help='write the JSON report here instead of '
                                 'stdout')
    k.set_defaults(cost_func=_cost_network)

    p = sub.add_parser('check', help='run the verification battery')
    p.add_argument('--seeds', type=int, default=20)
    p.add_argument('--perturb', choices=sorted(GRADIENT_OPS),
                   help='scale this op\'s analytic gradient as a negative '
                        'control')
    p.add_argument('--out', help='write the report as CSV')
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    """
    Entry point; returns the process exit code.

    Parameters
    ----------
    argv : list of str, optional
        Arguments without the program name; ``sys.argv[1:]`` by default
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(levelname)s %(name)s: '
                                           '%(message)s'))
    package_logger = logging.getLogger('darkforge')
    package_logger.addHandler(handler)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        if args.verbose:
            package_logger.setLevel(logging.DEBUG)
        elif args.quiet:
            package_logger.setLevel(logging.WARNING)
        else:
            package_logger.setLevel(logging.INFO)
        return args.func(args)
    except DarkforgeError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except ValueError as exc:
        logger.error("%s", exc)
        return UsageError.exit_code
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    finally:
        package_logger.removeHandler(handler)


if __name__ == '__main__':
    sys.exit(main())
