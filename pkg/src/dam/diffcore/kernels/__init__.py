"""Hot-kernel backend selection.

The compiled Cython extension is preferred when present; the pure-numpy
fallback is bit-compatible. Set ``DAM_KERNELS=numpy`` or ``DAM_KERNELS=cython``
to force a backend (forcing cython raises if the extension is missing).
"""

import os

from . import _numpy_backend

_requested = os.environ.get("DAM_KERNELS", "auto")

if _requested == "numpy":
    _impl = _numpy_backend
elif _requested in ("auto", "cython"):
    try:
        from . import _cykernels as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _numpy_backend
else:
    raise ValueError(f"unknown DAM_KERNELS backend {_requested!r}")

BACKEND = _impl.NAME
im2col = _impl.im2col
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward


def get_backend(name):
    """Return a specific backend module, independent of the global choice."""
    if name == "numpy":
        return _numpy_backend
    if name == "cython":
        from . import _cykernels

        return _cykernels
    raise ValueError(f"unknown backend {name!r}")
