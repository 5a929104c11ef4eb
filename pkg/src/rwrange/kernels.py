"""Backend selection for the hot loops.

The compiled extension is used when importable; set ``RWRANGE_PURE_PYTHON=1``
to force the numpy fallback. Both expose ``range_checkpoints``,
``range_many``, ``alpha_dense`` and ``alpha_binned``.
"""

from __future__ import annotations

import os

from rwrange import _fallback

if os.environ.get("RWRANGE_PURE_PYTHON"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from rwrange import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"
    else:
        BACKEND = "compiled"

range_checkpoints = _impl.range_checkpoints
range_many = _impl.range_many
alpha_dense = _impl.alpha_dense
alpha_binned = _impl.alpha_binned


def compiled():
    """The compiled module, or None when it is not built."""
    try:
        from rwrange import _kernels
    except ImportError:
        return None
    return _kernels


__all__ = ["BACKEND", "range_checkpoints", "range_many", "alpha_dense", "alpha_binned", "compiled"]
