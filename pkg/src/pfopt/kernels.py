"""Backend selection for the hot loops.

The compiled extension ``pfopt._ckernels`` is used when it imports; otherwise
(or when ``PFOPT_PURE_PYTHON=1``) the NumPy fallback in ``pfopt._pykernels`` is
used. ``BACKEND`` names the active one.
"""
import os

from . import _pykernels

if os.environ.get("PFOPT_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

prox_sorted_l1 = _impl.prox_sorted_l1
sorted_l1_norm = _impl.sorted_l1_norm
dual_sorted_l1_norm = _impl.dual_sorted_l1_norm
dual_gap = _impl.dual_gap
admm_loop = _impl.admm_loop
cycode_loop = _impl.cycode_loop


def get_backend(name):
    """Return the kernel module called ``name`` ("cython" or "python")."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401

        names.insert(0, "cython")
    except ImportError:
        pass
    return names
