"""Reading and writing images, golden tensors, parameter bundles and JSON."""

import hashlib
import json
import logging
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

__all__ = ['IMAGE_SUFFIXES', 'list_images', 'load_image', 'save_image',
           'file_sha256', 'write_json', 'read_json', 'write_tensor',
           'read_tensor', 'save_params', 'load_params']

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.png', '.jpg', '.jpeg')


def list_images(root):
    """
    List the image files below a directory.

    Parameters
    ----------
    root : str
        Corpus root directory

    Returns
    -------
    keys : list of str
        Paths relative to ``root`` in POSIX form, sorted. These are the
        image keys that seed the per-image random streams.
    """
    if not os.path.isdir(root):
        raise DataError("input directory {} does not exist".format(root))
    keys = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in filenames:
            if os.path.splitext(name)[1].lower() in IMAGE_SUFFIXES:
                rel = os.path.relpath(os.path.join(dirpath, name), root)
                keys.append(rel.replace(os.sep, '/'))
    return sorted(keys)


def load_image(path):
    """
    Decode a PNG or JPEG file into an 8-bit RGB array.

    Alpha is stripped and grayscale inputs are promoted by replication.

    Parameters
    ----------
    path : str
        Image file

    Returns
    -------
    img : numpy.ndarray
        uint8 array of shape (H, W, 3)
    """
    try:
        with Image.open(path) as im:
            rgb = im.convert('RGB')
            img = np.asarray(rgb, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError("cannot decode image {}: {}".format(path, exc))
    if img.size == 0:
        raise DataError("image {} is empty".format(path))
    return img


def save_image(path, img):
    """Write an (H, W, 3) or (H, W) uint8 array as PNG."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError("save_image expects uint8 data, got {}".format(
            img.dtype))
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    Image.fromarray(img).save(path, format='PNG')


def file_sha256(path):
    """Hex sha256 digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


def write_json(path, obj):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write('\n')


def read_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except OSError as exc:
        raise DataError("cannot read {}: {}".format(path, exc))
    except json.JSONDecodeError as exc:
        raise DataError("{} is not valid JSON: {}".format(path, exc))


def write_tensor(path, arr):
    """
    Write an array in the golden tensor format.

    The file is one ASCII header line ``f64 <ndim> <d0> <d1> ...`` followed
    by the values as little-endian IEEE-754 doubles in row-major order.

    Examples
    --------
    >>> import tempfile, os
    >>> path = os.path.join(tempfile.mkdtemp(), 't.f64')
    >>> write_tensor(path, np.arange(6.).reshape(2, 3))
    >>> read_tensor(path)
    array([[0., 1., 2.],
           [3., 4., 5.]])
    """
    arr = np.asarray(arr, dtype='<f8')
    header = ' '.join(['f64', str(arr.ndim)] + [str(d) for d in arr.shape])
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(header.encode('ascii') + b'\n')
        f.write(np.ascontiguousarray(arr).tobytes(order='C'))


def read_tensor(path):
    """Read a golden tensor file written by :func:`write_tensor`."""
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as exc:
        raise DataError("cannot read tensor {}: {}".format(path, exc))
    head, sep, body = raw.partition(b'\n')
    fields = head.decode('ascii', errors='replace').split()
    if not sep or len(fields) < 2 or fields[0] != 'f64':
        raise DataError("{} has no f64 tensor header".format(path))
    try:
        ndim = int(fields[1])
        dims = tuple(int(d) for d in fields[2:])
    except ValueError:
        raise DataError("{}: malformed tensor header {!r}".format(
            path, head[:80]))
    if ndim < 0 or any(d < 0 for d in dims):
        raise DataError("{}: negative size in tensor header".format(path))
    if len(dims) != ndim:
        raise DataError("{}: header declares {} dims but lists {}".format(
            path, ndim, len(dims)))
    count = int(np.prod(dims, dtype=np.int64))
    if len(body) != 8 * count:
        raise DataError("{}: expected {} values, found {} bytes".format(
            path, count, len(body)))
    return np.frombuffer(body, dtype='<f8').reshape(dims).astype(np.float64)


def save_params(directory, params):
    """
    Store named parameter arrays as golden tensors plus a manifest.

    Parameters
    ----------
    directory : str
        Output directory, created if needed
    params : dict
        Parameter name to array (scalars are stored as 0-d tensors)

    Returns
    -------
    manifest : dict
        name -> {"file": ..., "dims": [...]}, also written to
        ``manifest.json``
    """
    os.makedirs(directory, exist_ok=True)
    manifest = {}
    for name, value in params.items():
        arr = np.asarray(value, dtype=np.float64)
        filename = name.replace('/', '_') + '.f64'
        write_tensor(os.path.join(directory, filename), arr)
        manifest[name] = {'file': filename, 'dims': list(arr.shape)}
    write_json(os.path.join(directory, 'manifest.json'), manifest)
    logger.debug("wrote %d parameters to %s", len(manifest), directory)
    return manifest


def load_params(directory):
    """Load a parameter bundle written by :func:`save_params`."""
    manifest = read_json(os.path.join(directory, 'manifest.json'))
    params = {}
    for name, entry in manifest.items():
        arr = read_tensor(os.path.join(directory, entry['file']))
        if list(arr.shape) != list(entry['dims']):
            raise DataError("parameter {} has dims {}, manifest says {}".format(
                name, list(arr.shape), entry['dims']))
        params[name] = arr
    return params
