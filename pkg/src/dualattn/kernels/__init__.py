"""Hot loops behind convolution and resampling.

The compiled extension is used when it has been built; otherwise the numpy
fallback is loaded.  Set ``DUALATTN_KERNELS=python`` to force the fallback.

Both backends expose ``im2col``, ``col2im``, ``upsample2x`` and ``sumpool2x``
with identical array layouts.
"""

import os

from . import _pykernels

python_backend = _pykernels

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("DUALATTN_KERNELS", "") != "python":
    backend = compiled_backend
    BACKEND = "cython"
else:
    backend = _pykernels
    BACKEND = "python"

out_size = _pykernels.out_size


def im2col(x, kh, kw, stride, pad):
    return backend.im2col(x, kh, kw, stride, pad)


def col2im(cols, shape, kh, kw, stride, pad):
    return backend.col2im(cols, shape, kh, kw, stride, pad)


def upsample2x(x):
    return backend.upsample2x(x)


def sumpool2x(x):
    return backend.sumpool2x(x)
