"""Learned neural bases with PDE constraints enforced by a differentiable
least-squares layer.

``PDECL_NUM_THREADS`` caps BLAS/OpenMP/numba threads; it only takes effect
when set before the first import of numpy in the process.
"""
import os as _os

_threads = _os.environ.get("PDECL_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
