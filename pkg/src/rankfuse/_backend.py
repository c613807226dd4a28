"""Picks the compiled kernels when available, else the numpy fallback.

Set ``RANKFUSE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

if os.environ.get("RANKFUSE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _fallback
        BACKEND = "python"
    else:
        BACKEND = "cython"

rank_hinge = _impl.rank_hinge
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward

__all__ = ["BACKEND", "rank_hinge", "maxpool2x2_forward", "maxpool2x2_backward"]
