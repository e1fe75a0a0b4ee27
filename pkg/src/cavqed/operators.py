"""Dense operators on small composite Hilbert spaces.

Everything here is a thin layer over numpy arrays. An :class:`Operator`
carries its matrix plus the factor dimensions of the tensor-product space it
lives on; both are frozen after construction so operators can be shared
freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

__all__ = [
    "TOL_HERM",
    "TOL_ORTH",
    "TOL_TRACE",
    "TOL_POS",
    "NonHermitianError",
    "InvalidDensityMatrixError",
    "Operator",
    "tensor",
    "identity",
    "annihilation",
    "basis",
    "projector",
    "transition",
    "sigma_x",
    "sigma_y",
    "sigma_z",
    "eigendecompose",
    "hermitian_asymmetry",
    "check_density_matrix",
    "ket_to_dm",
]

TOL_HERM = 1e-10
TOL_ORTH = 1e-10
TOL_TRACE = 1e-8
TOL_POS = 1e-8


class NonHermitianError(ValueError):
    """Raised when an operator required to be Hermitian is not.

    The measured relative asymmetry ``max|H - H^dag| / max|H|`` is kept on
    the exception as ``asymmetry``.
    """

    def __init__(self, asymmetry: float, tol: float = TOL_HERM):
        self.asymmetry = asymmetry
        super().__init__(
            f"operator is not Hermitian: relative asymmetry {asymmetry:.3e} "
            f"exceeds {tol:.1e}"
        )


class InvalidDensityMatrixError(ValueError):
    pass


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Operator:
    """Square complex matrix with tensor-product dimension metadata.

    Parameters
    ----------
    data : array_like
        ``dim x dim`` complex matrix.
    dims : sequence of int, optional
        Factor dimensions; their product must equal ``dim``. Defaults to a
        single factor.
    """

    data: np.ndarray
    dims: tuple[int, ...] = ()

    # let numpy scalars defer to Operator arithmetic instead of broadcasting
    __array_ufunc__ = None

    def __post_init__(self):
        data = _freeze(self.data)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ValueError(f"operator must be square, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("operator entries must be finite")
        dims = tuple(int(d) for d in self.dims) or (data.shape[0],)
        if any(d < 1 for d in dims):
            raise ValueError(f"subsystem dimensions must be positive: {dims}")
        if int(np.prod(dims)) != data.shape[0]:
            raise ValueError(
                f"subsystem dims {dims} do not multiply to dimension {data.shape[0]}"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    def dag(self) -> "Operator":
        return Operator(self.data.conj().T, self.dims)

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def expect(self, rho: "Operator | np.ndarray") -> float:
        """Real part of ``Tr(self @ rho)``."""
        r = rho.data if isinstance(rho, Operator) else np.asarray(rho)
        return float(np.real(np.trace(self.data @ r)))

    def is_hermitian(self, tol: float = TOL_HERM) -> bool:
        return hermitian_asymmetry(self.data) <= tol

    def _other(self, other) -> np.ndarray:
        if isinstance(other, Operator):
            if other.dim != self.dim:
                raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other.data
        return other

    def __add__(self, other):
        if isinstance(other, Operator):
            return Operator(self.data + self._other(other), self.dims)
        if other == 0:
            return self
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        return Operator(self.data - self._other(other), self.dims)

    def __neg__(self):
        return Operator(-self.data, self.dims)

    def __mul__(self, scalar):
        if isinstance(scalar, Operator):
            return NotImplemented
        return Operator(self.data * scalar, self.dims)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Operator(self.data / scalar, self.dims)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            return Operator(self.data @ self._other(other), self.dims)
        return self.data @ np.asarray(other)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)

    def __repr__(self):
        return f"Operator(dim={self.dim}, dims={self.dims})"


def tensor(*ops: Operator) -> Operator:
    """Kronecker product, left factor outermost."""
    if not ops:
        raise ValueError("tensor() needs at least one operator")
    return reduce(
        lambda a, b: Operator(np.kron(a.data, b.data), a.dims + b.dims), ops
    )


def identity(n: int) -> Operator:
    return Operator(np.eye(n), (n,))


def annihilation(n: int) -> Operator:
    """Photon lowering operator truncated to ``n`` Fock levels."""
    if n < 2:
        raise ValueError(f"photon space needs at least 2 levels, got {n}")
    return Operator(np.diag(np.sqrt(np.arange(1, n)), k=1), (n,))


def basis(n: int, k: int) -> np.ndarray:
    if not 0 <= k < n:
        raise IndexError(f"basis index {k} out of range for dimension {n}")
    v = np.zeros(n, dtype=complex)
    v[k] = 1.0
    return v


def transition(n: int, i: int, j: int) -> Operator:
    """``|i><j|`` on an ``n``-level space."""
    m = np.zeros((n, n), dtype=complex)
    m[i, j] = 1.0
    return Operator(m, (n,))


def projector(n: int, k: int) -> Operator:
    return transition(n, k, k)


def sigma_x() -> Operator:
    return Operator([[0, 1], [1, 0]])


def sigma_y() -> Operator:
    return Operator([[0, -1j], [1j, 0]])


def sigma_z() -> Operator:
    return Operator([[1, 0], [0, -1]])


def hermitian_asymmetry(m: np.ndarray) -> float:
    m = np.asarray(m)
    scale = np.max(np.abs(m))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(m - m.conj().T)) / scale)


def eigendecompose(h: Operator | np.ndarray, tol: float = TOL_HERM):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix.

    Raises
    ------
    NonHermitianError
        If the relative asymmetry of ``h`` exceeds ``tol``.
    """
    m = h.data if isinstance(h, Operator) else np.asarray(h, dtype=complex)
    asym = hermitian_asymmetry(m)
    if asym > tol:
        raise NonHermitianError(asym, tol)
    evals, evecs = np.linalg.eigh(0.5 * (m + m.conj().T))
    return evals, evecs


def ket_to_dm(psi, dims: Sequence[int] = ()) -> Operator:
    psi = np.asarray(psi, dtype=complex).ravel()
    return Operator(np.outer(psi, psi.conj()), tuple(dims) or (psi.size,))


def check_density_matrix(
    rho: Operator | np.ndarray,
    weight: float = 1.0,
    tol_herm: float = TOL_HERM,
    tol_trace: float = TOL_TRACE,
    tol_pos: float = TOL_POS,
) -> None:
    """Validate Hermiticity, trace and positivity; raise on violation.

    ``weight`` is the expected trace, below 1 for a state projected onto a
    subspace.
    """
    m = rho.data if isinstance(rho, Operator) else np.asarray(rho)
    asym = hermitian_asymmetry(m)
    if asym > tol_herm:
        raise InvalidDensityMatrixError(f"not Hermitian (asymmetry {asym:.2e})")
    tr = np.real(np.trace(m))
    if abs(tr - weight) > tol_trace:
        raise InvalidDensityMatrixError(f"trace {tr:.12g} differs from {weight}")
    lo = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
    if lo < -tol_pos:
        raise InvalidDensityMatrixError(f"negative eigenvalue {lo:.3e}")
