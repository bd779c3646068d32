"""Kernel backend selection.

The compiled extension is used when importable; ``RRSGD_BACKEND=python``
forces the numpy fallback.
"""
import os

from . import _fallback

kernels = _fallback
name = "python"

if os.environ.get("RRSGD_BACKEND", "").lower() not in ("python", "numpy", "fallback"):
    try:
        from . import _core
    except ImportError:  # extension not built
        pass
    else:
        kernels = _core
        name = "compiled"


def get(backend=None):
    """Kernel module for ``backend`` (``"compiled"``, ``"python"`` or None)."""
    if backend is None:
        return kernels
    if backend == "python":
        return _fallback
    if backend == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {backend!r}")


def available() -> list:
    """Backends that can be loaded in this installation."""
    out = ["python"]
    try:
        from . import _core  # noqa: F401
    except ImportError:
        return out
    return ["compiled"] + out
