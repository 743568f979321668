"""Kernel backend selection.

The compiled Cython module is used when importable; otherwise the
pure-Python implementation. Set ``FORESTAGB_BACKEND=python`` to force the
fallback. Both backends are bit-identical.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _select() -> ModuleType:
    choice = os.environ.get("FORESTAGB_BACKEND", "").lower()
    if choice == "python" or _ckernels is None:
        return _pykernels
    return _ckernels


backend: ModuleType = _select()


def available() -> dict[str, ModuleType]:
    out = {"python": _pykernels}
    if _ckernels is not None:
        out["cython"] = _ckernels
    return out


def get(name: str | None = None) -> ModuleType:
    if name is None:
        return backend
    try:
        return available()[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available") from None


def use(name: str) -> None:
    """Switch the process-wide backend (mainly for tests and benchmarks)."""
    global backend
    backend = get(name)
