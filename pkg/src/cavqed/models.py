"""Builders for cavity-QED master-equation models.

Frequency convention: every coupling, linewidth and detuning is an angular
rate in rad/us whose numerical value equals the quoted MHz figure, so times
come out in microseconds. Detunings are (resonance - drive). The cavity
linewidth ``kappa`` is the full width at half maximum of the field decay,
entering through the collapse operator ``sqrt(kappa) a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import isfinite
from typing import Mapping, Sequence

import numpy as np

from .atomic_data import EXCITED_HYPERFINE_MHZ, Rb87Branching, rb87_branching
from .operators import (
    Operator,
    annihilation,
    identity,
    tensor,
    transition,
)

__all__ = [
    "SPEED_OF_LIGHT",
    "CavityParams",
    "Rb87Params",
    "LindbladSystem",
    "build_tavis_cummings",
    "build_rb87_two_atom",
    "excitation_number",
    "restrict",
    "coupling_profile",
    "figures_of_merit",
    "cooperativity",
    "RB87_LABELS",
    "RB87_QUBIT",
    "RB87_EXCITED",
    "RB87_DETECTABLE",
    "RB87_UNDETECTABLE",
]

SPEED_OF_LIGHT = 299_792_458.0  # m/s


def _check_nonneg(obj, names: Sequence[str]):
    for n in names:
        v = getattr(obj, n)
        if not isfinite(v):
            raise ValueError(f"{n} must be finite, got {v}")
        if v < 0:
            raise ValueError(f"{n} must be non-negative, got {v}")


def _check_finite(obj, names: Sequence[str]):
    for n in names:
        v = getattr(obj, n)
        if not isfinite(v):
            raise ValueError(f"{n} must be finite, got {v}")


@dataclass(frozen=True)
class CavityParams:
    """Two-level atoms in a single-mode cavity.

    Attributes
    ----------
    g_a, g_b : float
        Single-photon couplings of atoms A and B.
    kappa, gamma : float
        Cavity and atomic linewidths (FWHM).
    delta_c, delta_a : float
        Cavity and atom detuning from the drive.
    omega_probe : float
        Cavity drive amplitude.
    omega_side_a, omega_side_b : float
        Direct atomic drive amplitudes.
    phi_rel : float
        Phase of the side drive on atom B relative to atom A (radians).
    """

    g_a: float = 100.0
    g_b: float = 0.0
    kappa: float = 65.0
    gamma: float = 6.0
    delta_c: float = 0.0
    delta_a: float = 0.0
    omega_probe: float = 0.0
    omega_side_a: float = 0.0
    omega_side_b: float = 0.0
    phi_rel: float = 0.0

    def __post_init__(self):
        _check_nonneg(self, ("g_a", "g_b", "kappa", "gamma"))
        _check_finite(self, ("delta_c", "delta_a", "omega_probe",
                             "omega_side_a", "omega_side_b", "phi_rel"))

    def with_(self, **kw) -> "CavityParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class Rb87Params:
    """Two Rb-87 atoms in the cavity, atom A driven on the 2 -> 1' line.

    ``coupling_ratio`` multiplies the drive into the F'=3 level (written as a
    square root of nine in the reference model). ``delta_cavity`` detunes the
    cavity away from two-photon resonance and is zero for every protocol
    calculation.
    """

    g: float = 100.0
    kappa: float = 65.0
    gamma: float = 6.0
    omega: float = 0.6
    delta: float = 0.0
    delta2: float = EXCITED_HYPERFINE_MHZ[2] - EXCITED_HYPERFINE_MHZ[1]
    delta3: float = EXCITED_HYPERFINE_MHZ[3] - EXCITED_HYPERFINE_MHZ[1]
    branching: Rb87Branching = field(default_factory=rb87_branching)
    coupling_ratio: float = 3.0
    delta_cavity: float = 0.0

    def __post_init__(self):
        _check_nonneg(self, ("g", "kappa", "gamma", "delta2", "delta3", "coupling_ratio"))
        _check_finite(self, ("omega", "delta", "delta_cavity"))
        b = self.branching
        for a, bb in ((b.d, b.nd), (b.d3, b.nd3)):
            if min(a, bb) < 0 or abs(a + bb - 1) > 1e-12:
                raise ValueError("branching fractions must be non-negative and sum to 1")

    @property
    def gamma_d(self) -> float:
        return self.branching.d * self.gamma

    @property
    def gamma_nd(self) -> float:
        return self.branching.nd * self.gamma

    @property
    def gamma_3d(self) -> float:
        return self.branching.d3 * self.gamma

    @property
    def gamma_3nd(self) -> float:
        return self.branching.nd3 * self.gamma

    @property
    def cooperativity(self) -> float:
        return cooperativity(self.g, self.kappa, self.gamma)

    def with_(self, **kw) -> "Rb87Params":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class LindbladSystem:
    """Hamiltonian, collapse operators and basis labels.

    ``drive`` is the part of ``hamiltonian`` that is treated as a
    perturbation by adiabatic elimination (``None`` if undefined).
    ``subspaces`` maps names such as ``"qubit"`` or ``"detectable"`` to basis
    index tuples.
    """

    hamiltonian: Operator
    collapse_ops: tuple[Operator, ...] = ()
    basis_labels: tuple[str, ...] = ()
    collapse_names: tuple[str, ...] = ()
    drive: Operator | None = None
    subspaces: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        h = self.hamiltonian
        if not h.is_hermitian():
            from .operators import NonHermitianError, hermitian_asymmetry

            raise NonHermitianError(hermitian_asymmetry(h.data))
        ops = tuple(self.collapse_ops)
        for op in ops + ((self.drive,) if self.drive is not None else ()):
            if op.dim != h.dim:
                raise ValueError(f"operator dimension {op.dim} != {h.dim}")
        labels = tuple(self.basis_labels) or tuple(str(i) for i in range(h.dim))
        if len(labels) != h.dim:
            raise ValueError(f"{len(labels)} labels for dimension {h.dim}")
        names = tuple(self.collapse_names) or tuple(f"L{i}" for i in range(len(ops)))
        if len(names) != len(ops):
            raise ValueError("collapse_names must match collapse_ops")
        object.__setattr__(self, "collapse_ops", ops)
        object.__setattr__(self, "basis_labels", labels)
        object.__setattr__(self, "collapse_names", names)
        object.__setattr__(self, "subspaces", dict(self.subspaces))

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    def index(self, label: str) -> int:
        return self.basis_labels.index(label)


def _embed(op: Operator, pos: int, dims: Sequence[int]) -> Operator:
    factors = [identity(d) for d in dims]
    factors[pos] = op
    return tensor(*factors)


def _tc_labels(n_atoms: int, fock: int) -> tuple[str, ...]:
    atom = ("g", "e")
    out = []
    for n in range(fock):
        if n_atoms == 1:
            out.extend(f"{a},{n}" for a in atom)
        else:
            out.extend(f"{a}{b},{n}" for a in atom for b in atom)
    return tuple(out)


def build_tavis_cummings(p: CavityParams, n_atoms: int = 1, fock_levels: int = 2) -> LindbladSystem:
    """Tavis-Cummings model with cavity probe and atomic side drives.

    Ordering is cavity (outermost) then atom A then atom B. Labels read
    ``"eg,1"`` for atom A excited, atom B ground, one photon.
    """
    if n_atoms not in (1, 2):
        raise ValueError(f"n_atoms must be 1 or 2, got {n_atoms}")
    if fock_levels < 2:
        raise ValueError(f"fock_levels must be at least 2, got {fock_levels}")
    dims = (fock_levels,) + (2,) * n_atoms
    a = _embed(annihilation(fock_levels), 0, dims)
    sig = [_embed(transition(2, 0, 1), 1 + k, dims) for k in range(n_atoms)]
    gs = (p.g_a, p.g_b)[:n_atoms]
    drives = (p.omega_side_a, p.omega_side_b * np.exp(1j * p.phi_rel))[:n_atoms]

    num = _embed(Operator(np.diag(np.arange(fock_levels, dtype=float)), (fock_levels,)), 0, dims)
    h = p.delta_c * num
    drive = p.omega_probe * (a + a.dag())
    for s, g, eta in zip(sig, gs, drives):
        h = h + p.delta_a * (s.dag() @ s) + g * (s.dag() @ a + a.dag() @ s)
        drive = drive + eta * s.dag() + np.conj(eta) * s
    h = h + drive

    cops = [np.sqrt(p.kappa) * a] + [np.sqrt(p.gamma) * s for s in sig]
    names = ["cavity"] + [f"atom_{c}" for c in "AB"[:n_atoms]]
    return LindbladSystem(
        hamiltonian=h,
        collapse_ops=tuple(cops),
        basis_labels=_tc_labels(n_atoms, fock_levels),
        collapse_names=tuple(names),
        drive=drive,
    )


def excitation_number(n_atoms: int, fock_levels: int) -> Operator:
    """Total excitation number ``a^dag a + sum |e><e|``."""
    dims = (fock_levels,) + (2,) * n_atoms
    a = _embed(annihilation(fock_levels), 0, dims)
    n = a.dag() @ a
    for k in range(n_atoms):
        n = n + _embed(transition(2, 1, 1), 1 + k, dims)
    return n


def restrict(op: Operator, indices: Sequence[int]) -> Operator:
    """Block of ``op`` on the given basis indices."""
    idx = np.asarray(indices, dtype=int)
    return Operator(op.data[np.ix_(idx, idx)])


# Basis of the two-atom Rb-87 model. Atom A first; "c" marks the cavity
# polarization states (sigma+, sigma-).
RB87_LABELS = (
    "0,0", "0,1", "1,0", "1,1",
    "e,0", "e,1", "e3,0", "e3,1",
    "S_0", "S_1", "S_e", "S~_e",
    "-,0", "-,1", "+,0", "+,1",
    "Od,0", "Od,1", "Ond,0", "Ond,1",
    "O3d,0", "O3d,1", "O3nd,0", "O3nd,1",
    "-,O1", "+,O2", "-,O~1", "+,O~2",
)
RB87_QUBIT = (0, 1, 2, 3)
RB87_EXCITED = tuple(range(4, 12))
RB87_DETECTABLE = (12, 13, 14, 15, 16, 17, 20, 21, 24, 25, 26, 27)
RB87_UNDETECTABLE = (18, 19, 22, 23)


def build_rb87_two_atom(p: Rb87Params) -> LindbladSystem:
    """28-state model of two Rb-87 atoms with atom A driven.

    Basis index ``k`` (0-based) is state ``|k+1>`` of the reference
    enumeration; see :data:`RB87_LABELS`. The F'=3 and F'=2 levels sit at
    ``delta + delta3`` and ``delta + delta2``, reducing to the bare splittings
    on resonance.
    """
    n = 28

    def ket(i, j):  # 1-based |i><j|
        return transition(n, i - 1, j - 1).data

    r = p.coupling_ratio
    h = np.zeros((n, n), dtype=complex)
    for k in (5, 6, 11):
        h += p.delta * ket(k, k)
    for k in (7, 8):
        h += (p.delta + p.delta3) * ket(k, k)
    h += (p.delta + p.delta2) * ket(12, 12)
    for k in (9, 10):
        h += p.delta_cavity * ket(k, k)

    v = p.omega * (ket(5, 3) - r * ket(7, 3) + ket(6, 4) - r * ket(8, 4))
    v = v + v.conj().T
    c = p.g * (ket(11, 9) + np.sqrt(2) * ket(5, 9) + np.sqrt(2) * ket(6, 10)
               + np.sqrt(1 / 8) * ket(12, 9))
    h += v + c + c.conj().T

    k2, g2 = np.sqrt(p.kappa / 2), np.sqrt(p.gamma / 2)
    specs = [
        ("c1", k2 * (ket(13, 9) + ket(14, 10))),
        ("c2", -k2 * (ket(15, 9) + ket(16, 10))),
        ("d", np.sqrt(p.gamma_d) * (ket(17, 5) + ket(18, 6))),
        ("nd", np.sqrt(p.gamma_nd) * (ket(19, 5) + ket(20, 6))),
        ("3d", np.sqrt(p.gamma_3d) * (ket(21, 7) + ket(22, 8))),
        ("3nd", np.sqrt(p.gamma_3nd) * (ket(23, 7) + ket(24, 8))),
        ("e1", g2 * ket(25, 11)),
        ("e2", g2 * ket(26, 11)),
        ("e~1", g2 * ket(27, 12)),
        ("e~2", g2 * ket(28, 12)),
    ]
    return LindbladSystem(
        hamiltonian=Operator(h),
        collapse_ops=tuple(Operator(m) for _, m in specs),
        basis_labels=RB87_LABELS,
        collapse_names=tuple(nm for nm, _ in specs),
        drive=Operator(v),
        subspaces={
            "qubit": RB87_QUBIT,
            "excited": RB87_EXCITED,
            "detectable": RB87_DETECTABLE,
            "undetectable": RB87_UNDETECTABLE,
            "ground": tuple(i for i in range(n) if i not in RB87_EXCITED),
            # decay states in which atom B still carries its qubit, as
            # consecutive (B=0, B=1) pairs
            "atom_b_pairs": tuple(range(12, 24)),
        },
    )


def coupling_profile(x, a: float, x0: float, period: float, c: float):
    """Standing-wave coupling ``a cos(2 pi (x - x0) / period) + c``."""
    if not period > 0:
        raise ValueError(f"period must be positive, got {period}")
    return a * np.cos(2 * np.pi * (np.asarray(x, dtype=float) - x0) / period) + c


def cooperativity(g: float, kappa: float, gamma: float) -> float:
    if kappa <= 0 or gamma <= 0:
        raise ValueError("kappa and gamma must be positive")
    return 4.0 * g * g / (kappa * gamma)


def figures_of_merit(g: float, kappa: float, gamma: float, length_um: float) -> dict:
    """Cooperativity, free spectral range (MHz) and finesse.

    ``length_um`` is the mirror separation in micrometres.
    """
    if min(kappa, gamma, length_um) <= 0 or g < 0:
        raise ValueError("kappa, gamma and length must be positive and g >= 0")
    fsr_mhz = SPEED_OF_LIGHT / (2 * length_um * 1e-6) / 1e6
    return {
        "cooperativity": cooperativity(g, kappa, gamma),
        "fsr_mhz": fsr_mhz,
        "finesse": fsr_mhz / kappa,
    }
