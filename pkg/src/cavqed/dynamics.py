"""Lindblad master-equation engines.

Density matrices are vectorized row-major, ``vec(rho) = rho.ravel()``, so
``vec(A rho B) = (A kron B^T) vec(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from . import kernels
from .models import LindbladSystem
from .operators import Operator, hermitian_asymmetry

__all__ = [
    "TOL_SS",
    "SteadyStateError",
    "StepSizeUnderflowError",
    "SingularExcitedBlockError",
    "liouvillian_apply",
    "liouvillian",
    "liouvillian_sparse",
    "steady_state",
    "evolve",
    "EffectiveSystem",
    "adiabatic_eliminate",
]

TOL_SS = 1e-9
_NULL_TOL = 1e-7


class SteadyStateError(RuntimeError):
    """Null space of the Liouvillian is not one-dimensional."""

    def __init__(self, degeneracy: int, singular_values: np.ndarray):
        self.degeneracy = degeneracy
        self.singular_values = singular_values
        super().__init__(f"steady state not unique: {degeneracy} near-null directions")


class StepSizeUnderflowError(RuntimeError):
    pass


class SingularExcitedBlockError(np.linalg.LinAlgError):
    pass


def _mat(x) -> np.ndarray:
    return x.data if isinstance(x, Operator) else np.asarray(x, dtype=complex)


def liouvillian_apply(sys: LindbladSystem, rho) -> Operator:
    """``-i[H, rho] + sum_k (L rho L^dag - {L^dag L, rho}/2)``."""
    r = _mat(rho)
    if r.shape != (sys.dim, sys.dim):
        raise ValueError(f"density matrix shape {r.shape} does not match dimension {sys.dim}")
    h = sys.hamiltonian.data
    out = -1j * (h @ r - r @ h)
    for op in sys.collapse_ops:
        l = op.data
        ld = l.conj().T
        ldl = ld @ l
        out += l @ r @ ld - 0.5 * (ldl @ r + r @ ldl)
    return Operator(out, sys.hamiltonian.dims)


def liouvillian(sys: LindbladSystem) -> np.ndarray:
    """Dense superoperator acting on row-major ``vec(rho)``."""
    n = sys.dim
    eye = np.eye(n)
    h = sys.hamiltonian.data
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for op in sys.collapse_ops:
        l = op.data
        ldl = l.conj().T @ l
        sup += np.kron(l, l.conj()) - 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T))
    return sup


def liouvillian_sparse(sys: LindbladSystem) -> sp.csr_matrix:
    """Sparse version of :func:`liouvillian`."""
    n = sys.dim
    eye = sp.identity(n, dtype=complex, format="csr")
    h = sp.csr_matrix(sys.hamiltonian.data)
    sup = -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
    for op in sys.collapse_ops:
        l = sp.csr_matrix(op.data)
        ldl = (l.conj().T @ l).tocsr()
        sup = sup + sp.kron(l, l.conj()) - 0.5 * (sp.kron(ldl, eye) + sp.kron(eye, ldl.T))
    return sp.csr_matrix(sup)


def steady_state(sys: LindbladSystem) -> Operator:
    """Unique stationary state from the null space of the Liouvillian.

    Raises
    ------
    SteadyStateError
        If more than one singular value falls below ``1e-7`` of the largest.
    """
    n = sys.dim
    sup = liouvillian(sys)
    _, s, vh = np.linalg.svd(sup)
    rel = s / s[0]
    degeneracy = int(np.sum(rel <= _NULL_TOL))
    if degeneracy != 1:
        raise SteadyStateError(degeneracy, s)
    rho = vh[-1].conj().reshape(n, n)
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)
    res = np.max(np.abs(liouvillian_apply(sys, rho).data))
    scale = max(np.max(np.abs(sys.hamiltonian.data)), 1.0)
    if res > TOL_SS * scale:
        # one step of inverse iteration against the trace-constrained system
        a = sup.copy()
        b = np.zeros(n * n, dtype=complex)
        a[0, :] = np.eye(n).ravel()
        b[0] = 1.0
        rho = np.linalg.solve(a, b).reshape(n, n)
        rho = 0.5 * (rho + rho.conj().T)
    return Operator(rho, sys.hamiltonian.dims)


def _generator_norm(k: np.ndarray, jumps: Sequence[np.ndarray]) -> float:
    return 2.0 * np.linalg.norm(k, 2) + sum(np.linalg.norm(j, 2) ** 2 for j in jumps)


def _coo(m: np.ndarray):
    r, c = np.nonzero(m)
    return r.astype(np.intp), c.astype(np.intp), np.ascontiguousarray(m[r, c], dtype=complex)


def _kernel_args(sys: LindbladSystem):
    h = sys.hamiltonian.data
    jumps = [op.data for op in sys.collapse_ops]
    k = h - 0.5j * sum((j.conj().T @ j for j in jumps), np.zeros_like(h))
    krow, kcol, kval = _coo(k)
    rows, cols, vals, ptr = [], [], [], [0]
    for j in jumps:
        r, c, v = _coo(j)
        rows.append(r)
        cols.append(c)
        vals.append(v)
        ptr.append(ptr[-1] + len(r))
    cat = lambda xs, dt: np.ascontiguousarray(np.concatenate(xs) if xs else np.zeros(0), dtype=dt)
    jargs = (
        np.asarray(ptr, dtype=np.intp),
        cat(rows, np.intp),
        cat(cols, np.intp),
        cat(vals, complex),
    )
    return (krow, kcol, kval) + jargs, _generator_norm(k, jumps)


def evolve(
    sys: LindbladSystem,
    rho0,
    t: float,
    steps: int | None = None,
    method: str = "rk4",
    tol: float = 1e-9,
    max_steps: int = 50_000_000,
) -> Operator:
    """Propagate ``rho0`` for a time ``t``.

    Parameters
    ----------
    steps : int, optional
        Initial number of RK4 steps. By default the step obeys
        ``||L|| h <= 0.05``.
    method : {"rk4", "expm", "krylov"}
        ``"rk4"`` integrates with fixed steps and checks the result against
        a run with half the step (Richardson), doubling the step count until
        the difference drops below ``tol``. ``"expm"`` exponentiates the
        dense superoperator, preferable for long stiff segments.
        ``"krylov"`` applies the exponential of the sparse superoperator to
        the single initial state, cheapest for one-off propagations.

    Raises
    ------
    StepSizeUnderflowError
        If the required step count exceeds ``max_steps``.
    """
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    r0 = np.array(_mat(rho0), dtype=complex)
    if r0.shape != (sys.dim, sys.dim):
        raise ValueError(f"density matrix shape {r0.shape} does not match dimension {sys.dim}")
    if t == 0:
        return Operator(r0, sys.hamiltonian.dims)
    if method == "expm":
        prop = sla.expm(liouvillian(sys) * t)
        r = (prop @ r0.ravel()).reshape(r0.shape)
        return Operator(0.5 * (r + r.conj().T), sys.hamiltonian.dims)
    if method == "krylov":
        r = expm_multiply(liouvillian_sparse(sys) * t, r0.ravel()).reshape(r0.shape)
        return Operator(0.5 * (r + r.conj().T), sys.hamiltonian.dims)
    if method != "rk4":
        raise ValueError(f"unknown method {method!r}")

    args, lnorm = _kernel_args(sys)
    n = steps or max(1, int(np.ceil(lnorm * t / 0.05)))
    run = lambda m: np.asarray(kernels.rk4_propagate(r0, *args, t / m, m))
    coarse = run(n)
    while True:
        if 2 * n > max_steps:
            raise StepSizeUnderflowError(
                f"RK4 step fell below t/{max_steps} without meeting tolerance {tol:.1e}"
            )
        fine = run(2 * n)
        if np.max(np.abs(fine - coarse)) <= tol * 15:
            return Operator(fine, sys.hamiltonian.dims)
        coarse, n = fine, 2 * n


@dataclass(frozen=True, eq=False)
class EffectiveSystem:
    """Effective ground-subspace dynamics after adiabatic elimination.

    ``hamiltonian`` and the ``lindblad`` operators act on the ground
    subspace, indexed in the order of ``ground``.
    """

    hamiltonian: Operator
    lindblad: tuple[Operator, ...]
    names: tuple[str, ...]
    ground: tuple[int, ...]
    labels: tuple[str, ...]
    subspaces: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def local(self, full_index: int) -> int:
        return self.ground.index(full_index)

    def energy(self, full_index: int) -> float:
        """Diagonal effective energy of a ground state (full-space index)."""
        i = self.local(full_index)
        return float(np.real(self.hamiltonian.data[i, i]))

    def rate(self, full_index: int, targets: Iterable[int] | None = None) -> float:
        """Total effective decay rate out of a ground state.

        With ``targets`` (full-space indices) only decays landing there are
        counted.
        """
        j = self.local(full_index)
        rows = None if targets is None else [self.local(k) for k in targets]
        tot = 0.0
        for op in self.lindblad:
            col = op.data[:, j]
            if rows is not None:
                col = col[rows]
            tot += float(np.sum(np.abs(col) ** 2))
        return tot

    def cross_terms(self, i: int, j: int) -> dict:
        """Couplings between two ground states (full-space indices).

        Returns the Hamiltonian matrix element and the largest dissipative
        overlap ``|sum_k <L_k i|L_k j>|``; both vanish when the two states
        evolve independently.
        """
        a, b = self.local(i), self.local(j)
        h = complex(self.hamiltonian.data[a, b])
        d = sum(np.vdot(op.data[:, a], op.data[:, b]) for op in self.lindblad)
        return {"hamiltonian": abs(h), "dissipative": abs(complex(d))}

    def to_lindblad(self) -> LindbladSystem:
        subs = {k: tuple(self.local(i) for i in v if i in self.ground)
                for k, v in self.subspaces.items()}
        return LindbladSystem(
            hamiltonian=self.hamiltonian,
            collapse_ops=self.lindblad,
            basis_labels=self.labels,
            collapse_names=self.names,
            subspaces=subs,
        )


def adiabatic_eliminate(
    sys: LindbladSystem,
    ground: Sequence[int] | None = None,
    excited: Sequence[int] | None = None,
    perturbation: Operator | None = None,
) -> EffectiveSystem:
    """Effective operators for a weakly driven system.

    ``H_eff = -1/2 V_- [H_NH^-1 + (H_NH^-1)^dag] V_+ + H_g`` and
    ``L_eff = L H_NH^-1 V_+`` with ``H_NH = H_e - (i/2) sum L^dag L``
    restricted to the excited block.

    Raises
    ------
    SingularExcitedBlockError
        If ``H_NH`` cannot be inverted.
    """
    n = sys.dim
    if excited is None:
        excited = sys.subspaces.get("excited")
    if excited is None:
        raise ValueError("excited subspace must be given")
    excited = tuple(int(i) for i in excited)
    if ground is None:
        ground = sys.subspaces.get("ground") or tuple(i for i in range(n) if i not in excited)
    ground = tuple(int(i) for i in ground)
    if set(ground) & set(excited) or len(set(ground) | set(excited)) != n:
        raise ValueError("ground and excited subspaces must partition the basis")
    v = perturbation if perturbation is not None else sys.drive
    if v is None:
        raise ValueError("no perturbation given and system has no drive")

    g, e = np.asarray(ground), np.asarray(excited)
    h0 = sys.hamiltonian.data - v.data
    vp = v.data[np.ix_(e, g)]
    vm = v.data[np.ix_(g, e)]
    hnh = h0[np.ix_(e, e)].astype(complex)
    for op in sys.collapse_ops:
        l = op.data[:, e]
        hnh = hnh - 0.5j * (l.conj().T @ l)
    cond = np.linalg.cond(hnh)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularExcitedBlockError(f"excited-block Hamiltonian is singular (cond={cond:.2e})")
    inv = np.linalg.inv(hnh)
    heff = -0.5 * vm @ (inv + inv.conj().T) @ vp + h0[np.ix_(g, g)]
    heff = 0.5 * (heff + heff.conj().T)
    leff = tuple(Operator(op.data[np.ix_(g, e)] @ inv @ vp) for op in sys.collapse_ops)
    if hermitian_asymmetry(heff) > 1e-10:
        raise AssertionError("effective Hamiltonian lost Hermiticity")
    return EffectiveSystem(
        hamiltonian=Operator(heff),
        lindblad=leff,
        names=sys.collapse_names,
        ground=ground,
        labels=tuple(sys.basis_labels[i] for i in ground),
        subspaces=dict(sys.subspaces),
    )
