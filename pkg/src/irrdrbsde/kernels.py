"""Kernel selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``IRRDRBSDE_PURE=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("IRRDRBSDE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _fallback

ref_backward = _impl.ref_backward
picard = _impl.picard

__all__ = ["BACKEND", "ref_backward", "picard"]
