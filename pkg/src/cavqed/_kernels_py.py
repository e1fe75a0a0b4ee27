"""Pure numpy implementation of the RK4 propagation kernel.

Same algorithm and argument layout as the compiled extension; used when the
extension is unavailable or ``CAVQED_PURE_PYTHON=1``.
"""

from __future__ import annotations

import numpy as np


def _dense(row, col, val, n):
    m = np.zeros((n, n), dtype=complex)
    np.add.at(m, (row, col), val)
    return m


def rk4_propagate(rho0, krow, kcol, kval, jptr, jrow, jcol, jval, h, nsteps):
    rho = np.array(rho0, dtype=complex, order="C")
    n = rho.shape[0]
    k = _dense(krow, kcol, kval, n)
    jumps = np.stack(
        [_dense(jrow[a:b], jcol[a:b], jval[a:b], n) for a, b in zip(jptr[:-1], jptr[1:])]
    ) if len(jptr) > 1 else np.zeros((0, n, n), dtype=complex)
    jumps_dag = np.conj(np.transpose(jumps, (0, 2, 1)))

    def rhs(r):
        t = k @ r
        out = -1j * (t - t.conj().T)
        if jumps.shape[0]:
            out += np.sum(jumps @ r @ jumps_dag, axis=0)
        return out

    for _ in range(int(nsteps)):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * h * k1)
        k3 = rhs(rho + 0.5 * h * k2)
        k4 = rhs(rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
    return rho
