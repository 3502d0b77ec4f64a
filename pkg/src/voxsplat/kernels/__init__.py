"""Hot numeric kernels with numba and pure-numpy implementations.

The renderer dispatches on the active backend (see :mod:`voxsplat.backend`):
the numba path is the tiled rasterizer, the numpy path the brute-force
compositor.  Convolutions always run through the im2col + BLAS route in
:mod:`conv_np`, which is the fastest option on every backend; the direct-loop
numba convolutions in :mod:`conv_nb` are kept as an independent cross-check
and benchmark subject.  Numba modules are imported lazily so numpy-only runs
never pay JIT compilation time.
"""

from __future__ import annotations

from .. import backend as _backend
from . import conv_np as _conv


def _render_nb():
    from . import render_nb

    return render_nb


def conv3d_forward(x, w, stride, pad, backend=None):
    return _conv.conv3d_forward(x, w, stride, pad)


def conv3d_backward(x, w, g, stride, pad, backend=None):
    return _conv.conv3d_backward(x, w, g, stride, pad)


def conv2d_forward(x, w, stride, pad, backend=None):
    return _conv.conv2d_forward(x, w, stride, pad)


def conv2d_backward(x, w, g, stride, pad, backend=None):
    return _conv.conv2d_backward(x, w, g, stride, pad)


def render_forward(inputs, backend=None):
    if _backend.resolve(backend) == "numba":
        return _render_nb().render_forward(inputs)
    from . import render_np

    return render_np.render_forward(inputs)


def render_backward(inputs, g_out, backend=None):
    if _backend.resolve(backend) == "numba":
        return _render_nb().render_backward(inputs, g_out)
    from . import render_np

    return render_np.render_backward(inputs, g_out)


def render_records(inputs):
    """Per-pixel blending records; always computed on the numpy path."""
    from . import render_np

    return render_np.render_records(inputs)
