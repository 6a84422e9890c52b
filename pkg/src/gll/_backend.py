"""Kernel backend selection.

The compiled extension (gll._ckernels) is used when it imported cleanly and
the environment variable GLL_FORCE_PYTHON is unset; otherwise the numpy
fallbacks take over. Both expose the same three kernels with identical
semantics, so everything above this module is backend-agnostic.
"""

import os

from . import _pykernels

if os.environ.get("GLL_FORCE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

sqdist = _impl.sqdist
knn_select = _impl.knn_select
pcg = _impl.pcg
