"""Kernel backend selection.

The compiled extension is preferred; the numpy implementation is used when it
is missing or when the environment variable ``ZBSDE_BACKEND`` is ``python``.
Call sites go through :func:`kernels` so :func:`use_backend` can switch at
runtime (tests and the benchmark do this).
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_active = _pykernels
if _ckernels is not None and os.environ.get("ZBSDE_BACKEND", "").lower() != "python":
    _active = _ckernels


def kernels():
    return _active


def available():
    return sorted(_BACKENDS)


def use_backend(name):
    """Switch the active backend; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available()})")
    previous = _active.NAME
    _active = _BACKENDS[name]
    return previous


def backend_name():
    return _active.NAME
