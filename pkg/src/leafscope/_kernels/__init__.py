"""Integrator kernel selection: compiled extension when available,
pure-Python fallback otherwise.

Set LEAFSCOPE_FORCE_FALLBACK=1 to force the Python kernel (used by the
benchmark and the equivalence tests).
"""

import os

from . import geodesic_py

STATUS_OK = geodesic_py.STATUS_OK
STATUS_CHART_EXIT = geodesic_py.STATUS_CHART_EXIT
STATUS_UNDERFLOW = geodesic_py.STATUS_UNDERFLOW

if os.environ.get("LEAFSCOPE_FORCE_FALLBACK", "0") == "1":
    _impl = geodesic_py
    BACKEND = "python"
else:
    try:
        from . import _geodesic as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        _impl = geodesic_py
        BACKEND = "python"

integrate = _impl.integrate


def backend_name():
    return BACKEND
