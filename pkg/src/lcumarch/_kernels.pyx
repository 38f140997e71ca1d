# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled state-vector kernels; _kernels_py holds the numpy equivalents."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

ctypedef double complex cplx
ctypedef cnp.int64_t i64


def apply_matrix(cplx[:, ::1] states, cplx[:, ::1] mat, i64[::1] offsets,
                 i64 tmask, i64 cmask, i64 cval):
    """In-place: for every row and every base index (target bits 0, controls
    matching) apply mat to the 2^k amplitudes at base + offsets."""
    cdef Py_ssize_t R = states.shape[0], dim = states.shape[1]
    cdef Py_ssize_t m = mat.shape[0]
    cdef Py_ssize_t r, i, a, b
    cdef cplx acc
    cdef cplx* buf = <cplx*> malloc(m * sizeof(cplx))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(R):
                for i in range(dim):
                    if (i & tmask) != 0 or (i & cmask) != cval:
                        continue
                    for a in range(m):
                        buf[a] = states[r, i + offsets[a]]
                    for a in range(m):
                        acc = 0
                        for b in range(m):
                            acc = acc + mat[a, b] * buf[b]
                        states[r, i + offsets[a]] = acc
    finally:
        free(buf)


def xor_permute(cplx[:, ::1] states, i64[::1] masks):
    """In-place: row r becomes row r indexed by i ^ masks[r]."""
    cdef Py_ssize_t R = states.shape[0], dim = states.shape[1]
    cdef Py_ssize_t r, i, j
    cdef i64 mk
    cdef cplx t
    with nogil:
        for r in range(R):
            mk = masks[r]
            if mk == 0:
                continue
            for i in range(dim):
                j = i ^ mk
                if j > i:
                    t = states[r, i]
                    states[r, i] = states[r, j]
                    states[r, j] = t


def sample_rows(cplx[:, ::1] states, double[::1] uniforms):
    """One outcome per row drawn from |amplitude|^2 (rows need not be normalized)."""
    cdef Py_ssize_t R = states.shape[0], dim = states.shape[1]
    cdef cnp.ndarray[i64, ndim=1] out = np.empty(R, dtype=np.int64)
    cdef Py_ssize_t r, i
    cdef double tot, acc, u
    with nogil:
        for r in range(R):
            tot = 0
            for i in range(dim):
                tot = tot + states[r, i].real * states[r, i].real + states[r, i].imag * states[r, i].imag
            u = uniforms[r] * tot
            acc = 0
            out[r] = dim - 1
            for i in range(dim):
                acc = acc + states[r, i].real * states[r, i].real + states[r, i].imag * states[r, i].imag
                if acc > u:
                    out[r] = i
                    break
    return out
