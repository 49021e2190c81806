"""Desk-scale generative-network lab comparing generator output heads."""

import os as _os
import sys as _sys

# Pin BLAS to one thread when we are imported before numpy: results must not
# depend on worker count, and the batched GEMMs here are too small to shard.
if "numpy" not in _sys.modules:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

from .rng import SplitMix64, derive_seed
from .tensor import Tape, Tensor

__all__ = ["SplitMix64", "derive_seed", "Tape", "Tensor", "__version__"]
