"""Learned aligned UV mappings for textured shape collections.

The package trains a small family of networks that map surface points of
every shape in a category to a shared 2D UV chart, so that semantically
matching points land on matching texels. On top of the mapping it provides
texture baking, hole filling, texture swap between shapes, and mesh export.

Setting the environment variable AUV_THREADS to a positive integer caps
the BLAS/OpenMP worker pools; it must be in place before this package
(and with it numpy) is first imported.
"""

import os as _os

_cap = _os.environ.get("AUV_THREADS", "")
if _cap.isdigit() and int(_cap) >= 1:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

from .tensor import Tensor, Tape, gradcheck, ShapeMismatch

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "gradcheck", "ShapeMismatch", "__version__"]
