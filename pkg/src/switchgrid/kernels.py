"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the NumPy
fallback.  ``SWITCHGRID_BACKEND=python`` forces the fallback.
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_BACKENDS = {"python": _pykernels}
try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None
else:
    _BACKENDS["cython"] = _ckernels

if os.environ.get("SWITCHGRID_BACKEND", "").lower() == "python" or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"
log.debug("kernel backend: %s", BACKEND)


def get_backend(name=None):
    """Kernel module by name (``"cython"`` or ``"python"``); default is the active one."""
    name = name or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available") from None


def available_backends():
    return sorted(_BACKENDS)
