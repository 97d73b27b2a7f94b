"""Kernel backend selection.

The per-example gradient kernel dominates private-training runtime, so it
ships compiled (Cython) with this numpy fallback. Selection happens once at
import: the compiled module when present, else the fallback. Set
``FEDFAIR_KERNEL=python`` or ``FEDFAIR_KERNEL=c`` to force one.
"""

from __future__ import annotations

import os

from . import reference

_FORCED = os.environ.get("FEDFAIR_KERNEL", "auto").lower()

try:
    from . import _core
except ImportError:
    _core = None

if _FORCED == "python":
    _impl = reference
elif _FORCED == "c":
    if _core is None:
        raise ImportError(
            "FEDFAIR_KERNEL=c but the compiled kernel is not built; "
            "reinstall with a C toolchain or unset FEDFAIR_KERNEL"
        )
    _impl = _core
elif _FORCED == "auto":
    _impl = _core if _core is not None else reference
else:
    raise ValueError(f"FEDFAIR_KERNEL must be auto, c or python, got {_FORCED!r}")


def active_backend() -> str:
    """Name of the kernel backend in use: 'c' or 'python'."""
    return _impl.BACKEND_NAME


def compiled_available() -> bool:
    return _core is not None


def get_backend(name: str = "auto"):
    """Return a kernel module by name, independent of the active selection."""
    if name == "python":
        return reference
    if name == "c":
        if _core is None:
            raise ImportError("compiled kernel not built")
        return _core
    if name == "auto":
        return _impl
    raise ValueError(f"unknown backend {name!r}")


def per_example_clipped_sum(weights, biases, acts, seeds, clip_bound):
    return _impl.per_example_clipped_sum(weights, biases, acts, seeds, clip_bound)
