"""Kernel backend selection.

The propagators spend essentially all their time in CSR matrix-vector and
CSR @ dense-batch products.  At import time we pick the compiled Cython
kernels (quadheom._kernels, OpenMP row-parallel, bitwise deterministic for
any thread count) when they are available, and otherwise fall back to the
scipy.sparse implementations, which are also deterministic but
single-threaded.  ``spmv``/``spmm`` are the only entry points the engines
use, so the two backends are interchangeable.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

try:
    from . import _kernels as _K

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    _K = None
    HAVE_COMPILED = False

_FORCE_FALLBACK = os.environ.get("QUADHEOM_FORCE_FALLBACK", "") not in ("", "0")


def backend_name() -> str:
    """Name of the active kernel backend."""
    return "compiled" if (HAVE_COMPILED and not _FORCE_FALLBACK) else "scipy"


def set_num_threads(n: int) -> None:
    """Set the OpenMP thread count (no-op on the scipy fallback)."""
    if HAVE_COMPILED and not _FORCE_FALLBACK and n > 0:
        _K.set_num_threads(int(n))


def prepare_csr(a: sp.spmatrix) -> sp.csr_matrix:
    """Canonicalize a sparse matrix for the kernels (CSR, complex128, int32)."""
    a = sp.csr_matrix(a, dtype=np.complex128)
    a.sum_duplicates()
    a.sort_indices()
    if a.indptr.dtype != np.int32:
        a.indptr = a.indptr.astype(np.int32)
    if a.indices.dtype != np.int32:
        a.indices = a.indices.astype(np.int32)
    return a


def spmv(a: sp.csr_matrix, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """out = a @ x for a 1-D complex vector."""
    if out is None:
        out = np.empty(a.shape[0], dtype=np.complex128)
    if HAVE_COMPILED and not _FORCE_FALLBACK:
        _K.csr_matvec(a.indptr, a.indices, a.data, x, out)
    else:
        out[:] = a @ x
    return out


def spmm(a: sp.csr_matrix, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """out = a @ x for a C-contiguous 2-D complex batch."""
    if out is None:
        out = np.empty((a.shape[0], x.shape[1]), dtype=np.complex128)
    if HAVE_COMPILED and not _FORCE_FALLBACK:
        _K.csr_matmat(a.indptr, a.indices, a.data, x, out)
    else:
        out[:] = a @ x
    return out
