"""Backend selection for the particle and Picard kernels.

The compiled extension is used when it imports; setting the environment
variable ``GROUNDCTL_KERNELS=python`` forces the numpy fallback.
``BACKEND`` names the active implementation.
"""
from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import ABSORB, DRIFT_POWER, DRIFT_SIN, DRIFT_ZERO, FREE, REFLECT, drift_values

__all__ = ["BACKEND", "em_chunk", "picard_distances", "get_backend", "REFLECT", "ABSORB", "FREE",
           "DRIFT_ZERO", "DRIFT_POWER", "DRIFT_SIN", "drift_values"]


def get_backend(name: str | None = None):
    """Kernel module for ``name`` in ``{"auto", "cython", "python"}``."""
    name = (name or os.environ.get("GROUNDCTL_KERNELS", "auto")).lower()
    if name not in ("auto", "cython", "python"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "python":
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        if name == "cython":
            raise
        return _pykernels
    return _ckernels


_active = get_backend()
BACKEND = "cython" if _active is not _pykernels else "python"
em_chunk = _active.em_chunk
picard_distances = _active.picard_distances
