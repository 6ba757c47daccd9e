"""Kernel backend selection.

The compiled Cython core is preferred when it built successfully; the NumPy
backend implements identical contracts and is used otherwise. Override with
RFMUSIC_KERNELS=compiled|numpy (compiled raises if the extension is missing).
"""

import os

from . import numpy_backend

_mode = os.environ.get("RFMUSIC_KERNELS", "auto")

if _mode == "numpy":
    _impl = numpy_backend
elif _mode in ("auto", "compiled"):
    try:
        from . import _core as _impl
    except ImportError:
        if _mode == "compiled":
            raise ImportError(
                "RFMUSIC_KERNELS=compiled but the extension is not built; "
                "reinstall with a C compiler or unset the variable"
            )
        _impl = numpy_backend
else:
    raise ValueError(f"unknown RFMUSIC_KERNELS mode {_mode!r}")


def backend_name():
    return _impl.NAME


softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
rmsnorm_fwd = _impl.rmsnorm_fwd
rmsnorm_bwd = _impl.rmsnorm_bwd
silu_fwd = _impl.silu_fwd
silu_bwd = _impl.silu_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
adamw_update = _impl.adamw_update
