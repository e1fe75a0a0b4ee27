# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 propagation of the Lindblad master equation.

The generator is split as ``drho = -i (K rho - rho K^dag) + sum_k L_k rho L_k^dag``
with ``K = H - (i/2) sum_k L_k^dag L_k``. ``K`` and the jump operators are
passed in coordinate (COO) form since the physical models are very sparse.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef double complex cplx


cdef void _rhs(const cplx[:, ::1] rho, cplx[:, ::1] out, cplx[:, ::1] tmp,
               const Py_ssize_t[::1] krow, const Py_ssize_t[::1] kcol,
               const cplx[::1] kval,
               const Py_ssize_t[::1] jptr, const Py_ssize_t[::1] jrow,
               const Py_ssize_t[::1] jcol, const cplx[::1] jval) noexcept nogil:
    cdef Py_ssize_t n = rho.shape[0]
    cdef Py_ssize_t i, j, m, p, q, op
    cdef cplx v, w
    for i in range(n):
        for j in range(n):
            tmp[i, j] = 0
    # tmp = K rho
    for m in range(krow.shape[0]):
        i = krow[m]
        p = kcol[m]
        v = kval[m]
        for j in range(n):
            tmp[i, j] = tmp[i, j] + v * rho[p, j]
    # out = -i (tmp - tmp^dag)
    for i in range(n):
        for j in range(n):
            w = tmp[i, j] - tmp[j, i].conjugate()
            out[i, j] = -1j * w
    # jumps
    for op in range(jptr.shape[0] - 1):
        for p in range(jptr[op], jptr[op + 1]):
            for q in range(jptr[op], jptr[op + 1]):
                out[jrow[p], jrow[q]] = out[jrow[p], jrow[q]] + \
                    jval[p] * jval[q].conjugate() * rho[jcol[p], jcol[q]]


def rk4_propagate(cplx[:, ::1] rho0,
                  Py_ssize_t[::1] krow, Py_ssize_t[::1] kcol, cplx[::1] kval,
                  Py_ssize_t[::1] jptr, Py_ssize_t[::1] jrow,
                  Py_ssize_t[::1] jcol, cplx[::1] jval,
                  double h, Py_ssize_t nsteps):
    """Advance ``rho0`` by ``nsteps`` RK4 steps of size ``h``.

    The state is symmetrized to exact Hermiticity after every step.
    """
    cdef Py_ssize_t n = rho0.shape[0]
    cdef Py_ssize_t s, i, j
    cdef cplx a
    rho_a = np.array(rho0, dtype=np.complex128, order="C")
    cdef cplx[:, ::1] rho = rho_a
    cdef cplx[:, ::1] k1 = np.empty((n, n), dtype=np.complex128)
    cdef cplx[:, ::1] k2 = np.empty((n, n), dtype=np.complex128)
    cdef cplx[:, ::1] k3 = np.empty((n, n), dtype=np.complex128)
    cdef cplx[:, ::1] k4 = np.empty((n, n), dtype=np.complex128)
    cdef cplx[:, ::1] y = np.empty((n, n), dtype=np.complex128)
    cdef cplx[:, ::1] tmp = np.empty((n, n), dtype=np.complex128)
    cdef double h2 = 0.5 * h, h6 = h / 6.0
    with nogil:
        for s in range(nsteps):
            _rhs(rho, k1, tmp, krow, kcol, kval, jptr, jrow, jcol, jval)
            for i in range(n):
                for j in range(n):
                    y[i, j] = rho[i, j] + h2 * k1[i, j]
            _rhs(y, k2, tmp, krow, kcol, kval, jptr, jrow, jcol, jval)
            for i in range(n):
                for j in range(n):
                    y[i, j] = rho[i, j] + h2 * k2[i, j]
            _rhs(y, k3, tmp, krow, kcol, kval, jptr, jrow, jcol, jval)
            for i in range(n):
                for j in range(n):
                    y[i, j] = rho[i, j] + h * k3[i, j]
            _rhs(y, k4, tmp, krow, kcol, kval, jptr, jrow, jcol, jval)
            for i in range(n):
                for j in range(n):
                    rho[i, j] = rho[i, j] + h6 * (k1[i, j] + 2 * k2[i, j]
                                                  + 2 * k3[i, j] + k4[i, j])
            for i in range(n):
                rho[i, i] = rho[i, i].real
                for j in range(i + 1, n):
                    a = 0.5 * (rho[i, j] + rho[j, i].conjugate())
                    rho[i, j] = a
                    rho[j, i] = a.conjugate()
    return rho_a
