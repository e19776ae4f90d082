"""Low-light corpus synthesis and lightweight detector building blocks"""

__version__ = '1.0'

from .errors import *  # noqa
from .io import *  # noqa
from .image_stats import *  # noqa
from .degrade import *  # noqa
from .tensorkit import *  # noqa
from .fslconv import *  # noqa
from .snir import *  # noqa
from .lapm import *  # noqa
from .costmodel import *  # noqa
