"""Integration kernel selection.

The compiled extension ``epical._kernels`` is used when it imports; otherwise
the pure-Python twin ``epical._kernels_py``.  Set ``EPICAL_PURE_PYTHON=1`` to
force the fallback (the test-suite does this to cross-check both).
"""
import os

from . import _kernels_py

if os.environ.get("EPICAL_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

flat = _impl.flat
grouped = _impl.grouped


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
