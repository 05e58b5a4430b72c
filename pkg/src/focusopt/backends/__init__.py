"""Kernel backend selection.

Two interchangeable kernel sets exist: a compiled Cython extension
(``_ckernels``) and a numpy fallback (``purepy``).  The compiled one is
preferred when built.  ``FOCUSOPT_BACKEND`` (``c`` | ``python`` | ``auto``)
forces the choice at import time; this selects the compute kernels only and
is independent of run configuration.

The active backend is exported as ``kernels``; its name is in
``kernels.NAME`` and is echoed into every report for provenance.
"""

import os

from . import purepy

try:
    from . import _ckernels
except ImportError:
    _ckernels = None


def available():
    """Names of the importable backends."""
    names = ["python"]
    if _ckernels is not None:
        names.insert(0, "c")
    return names


def get(name):
    """Backend module by name; raises KeyError for unknown/unbuilt."""
    if name == "python":
        return purepy
    if name == "c" and _ckernels is not None:
        return _ckernels
    raise KeyError(f"backend {name!r} not available (have: {available()})")


def _select():
    choice = os.environ.get("FOCUSOPT_BACKEND", "auto")
    if choice == "auto":
        return _ckernels if _ckernels is not None else purepy
    return get(choice)


kernels = _select()
