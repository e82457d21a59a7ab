"""Backend selection for the hot kernels.

The compiled extension is used when it is importable; ``GEOTIME_PURE=1``
forces the pure-Python twin.  ``BACKEND`` names the one in use.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("GEOTIME_PURE", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

integrate = _impl.integrate
gauss_curvature_at = _impl.gauss_curvature_at
fast_march = _impl.fast_march

EUCLIDEAN = _pykernels.EUCLIDEAN
CONFORMAL_BUMP = _pykernels.CONFORMAL_BUMP
CONSTANT_CURVATURE = _pykernels.CONSTANT_CURVATURE
CUSTOM_SPD = _pykernels.CUSTOM_SPD
ST_HORIZON = _pykernels.ST_HORIZON
ST_EXITED = _pykernels.ST_EXITED
ST_CHART = _pykernels.ST_CHART
ST_UNDERFLOW = _pykernels.ST_UNDERFLOW
ST_TARGET = _pykernels.ST_TARGET

__all__ = ["BACKEND", "integrate", "gauss_curvature_at", "fast_march"]
