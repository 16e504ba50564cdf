"""Raster kernel backend selection.

Prefers the compiled extension and falls back to the numpy implementation.
Both backends are bit-identical; set POLYSEQ_KERNELS=python (or =cython) to
force one, e.g. for benchmarking.
"""

import os

from . import _pykernels

_FORCE = os.environ.get("POLYSEQ_KERNELS", "").strip().lower()
if _FORCE not in ("", "cython", "c", "python", "py", "numpy"):
    raise RuntimeError(f"unrecognized POLYSEQ_KERNELS value: {_FORCE!r}")

if _FORCE in ("python", "py", "numpy"):
    _impl = _pykernels
    BACKEND = "numpy"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        if _FORCE in ("cython", "c"):
            raise
        _impl = _pykernels
        BACKEND = "numpy"

draw_segment = _impl.draw_segment
draw_disc = _impl.draw_disc
raster_iou_counts = _impl.raster_iou_counts
MAX_POLY_VERTS = 128


def available_backends():
    """Map of importable backend name -> module (for tests and benchmarks)."""
    backends = {"numpy": _pykernels}
    try:
        from . import _ckernels

        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends
