"""Kernel backend selection.

The compiled backend is used when numba imports cleanly.  Setting
``WEAKKAM_BACKEND=numpy`` forces the pure-numpy twins (useful for debugging
and for the benchmark).
"""

from __future__ import annotations

import importlib
import logging
import os

from . import _numpy

log = logging.getLogger(__name__)

_requested = os.environ.get("WEAKKAM_BACKEND", "numba").strip().lower()

if _requested not in ("numba", "numpy"):
    raise ImportError(f"WEAKKAM_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

_numba = None
if _requested == "numba":
    try:
        _numba = importlib.import_module(f"{__name__}._numba")
    except ImportError as exc:  # pragma: no cover - numba is a hard dependency
        log.warning("numba unavailable (%s); using the numpy kernels", exc)
        _numba = None

BACKEND = "numba" if _numba is not None else "numpy"
_impl = _numba if _numba is not None else _numpy


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    if name == "numpy":
        return _numpy
    if name == "numba":
        return _numba if _numba is not None else importlib.import_module(f"{__name__}._numba")
    raise ValueError(f"unknown backend {name!r}")


def set_threads(k: int | None) -> None:
    """Cap the numba worker count (no-op for the numpy backend)."""
    if k is None or _numba is None:
        return
    import numba
    numba.set_num_threads(max(1, min(int(k), numba.config.NUMBA_NUM_THREADS)))


def step1d(*args):
    _impl.step1d(*args)


def step2d(*args):
    _impl.step2d(*args)
