"""Kernel backend selection.

Two interchangeable kernel sets exist: the Cython extension
(``sparse_mlp._core``) and the pure-Python mirror (:mod:`.pure`).  The
compiled one is picked when importable; ``SPARSE_MLP_BACKEND=pure`` or
``=compiled`` forces the choice (the latter raises if the extension is
missing).  Both produce bitwise-identical results; the compiled core is
typically two to three orders of magnitude faster (see benchmarks/).

``active`` is the module-level handle every caller goes through; tests may
swap it with :func:`select`.
"""

import inspect
import os

from . import pure

_KERNEL_NAMES = [
    name for name, fn in vars(pure).items()
    if not name.startswith("_") and inspect.isfunction(fn)
]


def _load_compiled():
    from sparse_mlp import _core

    missing = [name for name in _KERNEL_NAMES if not hasattr(_core, name)]
    if missing:
        raise ImportError(f"compiled backend lacks kernels: {missing}")
    return _core


def _initial():
    forced = os.environ.get("SPARSE_MLP_BACKEND")
    if forced == "pure":
        return pure
    if forced == "compiled":
        return _load_compiled()
    if forced is not None:
        raise ValueError(f"SPARSE_MLP_BACKEND must be 'pure' or 'compiled', got {forced!r}")
    try:
        return _load_compiled()
    except ImportError:
        return pure


active = _initial()


def name() -> str:
    return "pure" if active is pure else "compiled"


def select(which: str):
    """Swap the active backend ('pure' or 'compiled'); returns the module."""
    global active
    if which == "pure":
        active = pure
    elif which == "compiled":
        active = _load_compiled()
    else:
        raise ValueError(f"unknown backend {which!r}")
    return active
