"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
NumPy reference versions in ``_kernels_py`` are used.  Set
``KFLOW_BACKEND=python`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("KFLOW_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py

incidence_matvec = _impl.incidence_matvec
heavy_scan = _impl.heavy_scan
assemble_schur = _impl.assemble_schur
path_batch = _impl.path_batch
edge_blocks = _kernels_py.edge_blocks


def get_backend(name):
    """Return the kernel module for ``'python'`` or ``'cython'``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
