"""Conv kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
implementation takes over. CFLAB_KERNEL_BACKEND=numpy|cython forces a
choice (forcing cython without the extension raises at import).
Both backends share the NHWC layout and (k_w, k_h, c_in, c_out) kernels.
"""

import os

import numpy as np

from . import _conv_numpy

_FORCED = os.environ.get("CFLAB_KERNEL_BACKEND", "").strip().lower()

if _FORCED in ("numpy", "python"):
    _impl = _conv_numpy
    BACKEND = "numpy"
elif _FORCED in ("", "cython", "compiled"):
    try:
        from . import _conv_kernels as _impl

        BACKEND = "cython"
    except ImportError:
        if _FORCED:
            raise
        _impl = _conv_numpy
        BACKEND = "numpy"
else:
    raise ValueError(f"unknown CFLAB_KERNEL_BACKEND {_FORCED!r}")


def backend():
    """Name of the active backend: 'cython' or 'numpy'."""
    return BACKEND


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def out_dim(in_dim, kernel, padding, stride):
    """Output width/height of a strided conv: (in + 2p - k) // s + 1."""
    return (in_dim + 2 * padding - kernel) // stride + 1


def conv2d_forward(x, w, b, stride=(1, 1), padding=(0, 0)):
    return _impl.conv2d_forward(_c64(x), _c64(w), _c64(b), stride, padding)


def conv2d_backward_input(gy, w, stride, padding, in_w, in_h):
    return _impl.conv2d_backward_input(
        _c64(gy), _c64(w), stride, padding, in_w, in_h
    )


def conv2d_backward_weights(x, gy, k_w, k_h, stride, padding):
    return _impl.conv2d_backward_weights(
        _c64(x), _c64(gy), k_w, k_h, stride, padding
    )
