"""Kernel backend selection.

The compiled kernel is used when it imports cleanly. Setting the environment
variable ``BRAKECHORDS_PURE_PYTHON`` to a non-empty value other than ``0``
forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _pykernel

_FORCE_PURE = os.environ.get("BRAKECHORDS_PURE_PYTHON", "") not in ("", "0")

try:
    if _FORCE_PURE:
        raise ImportError("pure-python backend requested")
    from . import _ckernel
except ImportError:
    _ckernel = None

BACKENDS = {"python": _pykernel.FamilyKernel}
if _ckernel is not None:
    BACKENDS["cython"] = _ckernel.FamilyKernel

DEFAULT_BACKEND = "cython" if _ckernel is not None else "python"


def available_backends() -> list[str]:
    """Names of the importable kernel backends."""
    return sorted(BACKENDS)


def kernel_class(name: str | None = None):
    """Kernel class for ``name`` (default: the preferred available backend)."""
    name = DEFAULT_BACKEND if name is None else name
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available_backends()}") from None
