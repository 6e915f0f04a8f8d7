"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the NumPy
fallback.  Set ``MESHLIFT_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("MESHLIFT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "compiled"


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ('compiled' / 'python'), or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels  # raises ImportError when unavailable
        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def rasterize(px, z, tris, H, W):
    return _impl.rasterize(px, z, tris, int(H), int(W))


def integrate_cloth(*args):
    return _impl.integrate_cloth(*args)
