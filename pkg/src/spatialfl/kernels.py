"""Backend selection for the hot loops.

The compiled Cython module is used when it was built; otherwise the numpy
versions are imported. Both backends give identical bits. Set
``SPATIALFL_PURE_PYTHON=1`` to force the fallback.
"""
import os

from spatialfl import _pykernels

BACKEND = "python"
capture_csr = _pykernels.capture_csr
nearest_centroid = _pykernels.nearest_centroid

if not os.environ.get("SPATIALFL_PURE_PYTHON"):
    try:
        from spatialfl import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        capture_csr = _ckernels.capture_csr
        nearest_centroid = _ckernels.nearest_centroid

__all__ = ["BACKEND", "capture_csr", "nearest_centroid"]
