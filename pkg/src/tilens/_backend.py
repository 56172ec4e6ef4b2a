"""Import-time selection between the compiled and pure kernels."""

import os

from . import _pykernels

BACKEND = "python"
ti_jet = _pykernels.ti_jet
bspline3_jet = _pykernels.bspline3_jet

if os.environ.get("TILENS_PURE", "0") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        _ckernels = None
    if _ckernels is not None:
        ti_jet = _ckernels.ti_jet
        bspline3_jet = _ckernels.bspline3_jet
        BACKEND = "cython"
