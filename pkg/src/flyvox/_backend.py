"""Kernel backend selection.

The compiled extension is used when importable; ``FLYVOX_PURE_PYTHON=1``
forces the pure-Python twin (useful for debugging and for checking that both
backends agree).
"""
from __future__ import annotations

import logging
import os

log = logging.getLogger(__name__)

if os.environ.get("FLYVOX_PURE_PYTHON", "").strip() not in ("", "0"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        log.warning("flyvox: compiled kernels unavailable, using the pure-Python fallback")
        from . import _kernels_py as kernels

BACKEND: str = kernels.NAME


def available_backends():
    """All importable kernel modules, compiled first."""
    mods = []
    try:
        from . import _kernels  # type: ignore[attr-defined]

        mods.append(_kernels)
    except ImportError:  # pragma: no cover
        pass
    from . import _kernels_py

    mods.append(_kernels_py)
    return mods
