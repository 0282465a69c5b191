"""Inner-loop kernels with a compiled fast path.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
numpy implementation in ``_reference`` is. Setting ``CONFT_PURE_PYTHON=1``
forces the fallback.
"""

import os

from . import _reference

BACKEND = "python"

if os.environ.get("CONFT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _reference
else:
    _impl = _reference

contrastive_terms = _impl.contrastive_terms
cluster_sums = _impl.cluster_sums

__all__ = ["BACKEND", "contrastive_terms", "cluster_sums"]
