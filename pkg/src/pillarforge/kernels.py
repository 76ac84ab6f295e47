"""Backend selection for the hot geometric kernels.

The compiled ``_ckernels`` extension is used when importable. Setting
``PILLARFORGE_PURE_PYTHON=1`` forces the pure-Python fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("PILLARFORGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
    except ImportError:
        _impl = _pykernels
    else:
        BACKEND = "cython"

rect_inter_area = _impl.rect_inter_area
pairwise_inter_area = _impl.pairwise_inter_area
fps = _impl.fps


def available_backends():
    """Map backend name to kernel module, for benchmarks and cross-checks."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
