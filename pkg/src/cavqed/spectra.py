"""Probe and side-drive spectra, loss spectra and cavity-parameter fits.

Sweeps use a common reference frequency: the probe detuning ``Delta_P`` is
subtracted from both the cavity and atom detunings of the base parameters,
so ``Delta_c = p.delta_c - Delta_P`` and ``Delta_a = p.delta_a - Delta_P``.

The analytic signals are the weak-drive intracavity photon number in the
same units as the numeric ``<a^dag a>``.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dynamics import evolve, steady_state
from .models import (
    RB87_DETECTABLE,
    CavityParams,
    Rb87Params,
    build_rb87_two_atom,
    build_tavis_cummings,
)
from .operators import Operator, annihilation, identity, tensor

__all__ = [
    "Spectrum",
    "FitResult",
    "FitError",
    "probe_transmission_analytic",
    "side_drive_analytic",
    "probe_spectrum_numeric",
    "side_drive_spectrum_numeric",
    "fit_cavity_params",
    "levenberg_marquardt",
    "loss_spectrum",
    "find_peaks",
    "spectra_to_csv",
]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Signal versus detuning.

    ``axis`` is ``"probe"`` for a sweep of the drive frequency and
    ``"cavity"`` for a sweep of the cavity resonance. ``n_atoms`` labels the
    trace for simultaneous fits.
    """

    detunings: np.ndarray
    signal: np.ndarray
    axis: str = "probe"
    method: str = "analytic"
    n_atoms: int | None = None
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.detunings, dtype=float).ravel()
        y = np.array(self.signal, dtype=float).ravel()
        if x.shape != y.shape:
            raise ValueError(f"detunings ({x.size}) and signal ({y.size}) lengths differ")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("spectrum contains non-finite values")
        if y.size and np.min(y) < -1e-12 * max(np.max(np.abs(y)), 1e-300):
            raise ValueError("spectrum signal must be non-negative")
        if self.axis not in ("probe", "cavity"):
            raise ValueError(f"axis must be 'probe' or 'cavity', got {self.axis!r}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "detunings", x)
        object.__setattr__(self, "signal", y)
        object.__setattr__(self, "meta", dict(self.meta))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detuning_mhz", "signal"])
        for x, y in zip(self.detunings, self.signal):
            w.writerow([repr(float(x)), repr(float(y))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "method": self.method,
            "n_atoms": self.n_atoms,
            "meta": dict(self.meta),
            "detuning_mhz": self.detunings.tolist(),
            "signal": self.signal.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def spectra_to_csv(spectra: Sequence[Spectrum], labels: Sequence[str] | None = None) -> str:
    """Several traces in long format: ``trace, detuning_mhz, signal``."""
    labels = labels or [f"{s.n_atoms}_atoms" if s.n_atoms is not None else str(i)
                        for i, s in enumerate(spectra)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trace", "detuning_mhz", "signal"])
    for lab, s in zip(labels, spectra):
        for x, y in zip(s.detunings, s.signal):
            w.writerow([lab, repr(float(x)), repr(float(y))])
    return buf.getvalue()


def _couplings(p: CavityParams, n_atoms: int | None):
    if n_atoms is None:
        n_atoms = 2 if p.g_b > 0 else 1 if p.g_a > 0 else 0
    if n_atoms not in (0, 1, 2):
        raise ValueError(f"n_atoms must be 0, 1 or 2, got {n_atoms}")
    return (p.g_a, p.g_b)[:n_atoms], n_atoms


def _lorentz_parts(p: CavityParams, dp: np.ndarray, gs):
    kt = p.kappa / 2 + 1j * (p.delta_c - dp)
    gt = p.gamma / 2 + 1j * (p.delta_a - dp)
    csum = sum(g * g / (kt * gt) for g in gs) if gs else 0.0
    return kt, gt, csum


def probe_transmission_analytic(p: CavityParams, detunings, n_atoms: int | None = None) -> Spectrum:
    """Weak-probe intracavity photon number ``|Omega_p / (kt (1 + sum C_i))|^2``.

    ``kt = kappa/2 + i Delta_c`` and ``C_i = g_i^2/(kt gt)`` with
    ``gt = gamma/2 + i Delta_a``. A zero probe amplitude is read as unit
    amplitude (response per unit drive squared). ``n_atoms`` defaults to the
    number of atoms with non-zero coupling.
    """
    dp = np.asarray(detunings, dtype=float)
    gs, n = _couplings(p, n_atoms)
    kt, _, csum = _lorentz_parts(p, dp, gs)
    om = p.omega_probe or 1.0
    sig = np.abs(om / (kt * (1 + csum))) ** 2
    return Spectrum(dp, sig, "probe", "analytic", n, {"drive": "probe"})


def side_drive_analytic(p: CavityParams, detunings, n_atoms: int | None = None) -> Spectrum:
    """Weak side-drive photon number ``|sum_i eta_i g_i/(kt gt) / (1 + sum C_i)|^2``.

    ``eta_B`` carries the phase ``exp(i phi_rel)``.
    """
    dp = np.asarray(detunings, dtype=float)
    gs, n = _couplings(p, n_atoms)
    kt, gt, csum = _lorentz_parts(p, dp, gs)
    etas = (p.omega_side_a, p.omega_side_b * np.exp(1j * p.phi_rel))[: len(gs)]
    num = sum(e * g / (kt * gt) for e, g in zip(etas, gs)) if gs else 0.0
    sig = np.abs(num / (1 + csum)) ** 2 * np.ones_like(dp)
    return Spectrum(dp, sig, "probe", "analytic", n, {"drive": "side", "phi_rel": p.phi_rel})


def _photon_number(n_atoms: int, fock: int) -> Operator:
    a = annihilation(fock)
    return tensor(a.dag() @ a, *[identity(2)] * n_atoms)


def _map(fn: Callable, items, workers: int | None):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def probe_spectrum_numeric(p: CavityParams, detunings, n_atoms: int = 1,
                           fock_levels: int = 3, workers: int | None = None) -> Spectrum:
    """Steady-state ``<a^dag a>`` under a cavity probe of amplitude ``omega_probe``."""
    dp = np.asarray(detunings, dtype=float)
    n_op = _photon_number(max(n_atoms, 1), fock_levels)
    q = p.with_(omega_side_a=0.0, omega_side_b=0.0)
    if n_atoms == 0:
        q = q.with_(g_a=0.0, g_b=0.0)
    elif n_atoms == 1:
        q = q.with_(g_b=0.0)

    def point(d):
        sys = build_tavis_cummings(q.with_(delta_c=p.delta_c - d, delta_a=p.delta_a - d),
                                   max(n_atoms, 1), fock_levels)
        return n_op.expect(steady_state(sys))

    sig = np.clip(_map(point, dp, workers), 0.0, None)
    return Spectrum(dp, sig, "probe", "numeric-steady-state", n_atoms,
                    {"drive": "probe", "fock_levels": fock_levels})


def side_drive_spectrum_numeric(
    p: CavityParams,
    n_atoms: int,
    detunings,
    delta_c: float | None = None,
    phases: Sequence[float] | None = None,
    fock_levels: int = 3,
    workers: int | None = None,
) -> Spectrum:
    """Steady-state ``<a^dag a>`` under atomic side drives.

    With two atoms the result is averaged over the relative drive phases in
    ``phases`` (default in-phase and out-of-phase). Pass a longer phase list
    for a continuous-phase average. ``delta_c`` overrides the base cavity
    detuning.
    """
    if n_atoms not in (1, 2):
        raise ValueError("side-drive spectra need 1 or 2 atoms")
    dp = np.asarray(detunings, dtype=float)
    dc0 = p.delta_c if delta_c is None else delta_c
    if n_atoms == 1:
        phases = (0.0,)
        base = p.with_(g_b=0.0, omega_side_b=0.0, omega_probe=0.0)
    else:
        phases = (0.0, np.pi) if phases is None else tuple(phases)
        base = p.with_(omega_probe=0.0)
    n_op = _photon_number(n_atoms, fock_levels)

    def point(d):
        vals = []
        for ph in phases:
            sys = build_tavis_cummings(
                base.with_(delta_c=dc0 - d, delta_a=p.delta_a - d, phi_rel=ph),
                n_atoms, fock_levels)
            vals.append(n_op.expect(steady_state(sys)))
        return float(np.mean(vals))

    sig = np.clip(_map(point, dp, workers), 0.0, None)
    return Spectrum(dp, sig, "probe", "numeric-steady-state", n_atoms,
                    {"drive": "side", "phases": list(phases), "delta_c": dc0,
                     "fock_levels": fock_levels})


def find_peaks(s: Spectrum, min_prominence: float = 0.05) -> np.ndarray:
    """Detunings of local maxima higher than ``min_prominence`` of the global maximum."""
    y = s.signal
    top = np.max(y) if y.size else 0.0
    idx = [i for i in range(1, y.size - 1)
           if y[i] >= y[i - 1] and y[i] > y[i + 1] and y[i] >= min_prominence * top]
    out = []
    for i in idx:  # parabolic refinement
        x0, x1, x2 = s.detunings[i - 1:i + 2]
        y0, y1, y2 = y[i - 1:i + 2]
        den = (y0 - 2 * y1 + y2)
        shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        out.append(x1 + shift * (x2 - x1))
    return np.array(out)


# ----------------------------------------------------------------------------
# fitting


class FitError(RuntimeError):
    """Fit failed; ``best`` holds the best parameter vector reached."""

    def __init__(self, message: str, best: np.ndarray | None = None, diagnostics: dict | None = None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class FitResult:
    g: float
    kappa: float
    g_err: float
    kappa_err: float
    amplitudes: tuple[float, ...]
    offsets: tuple[float, ...]
    amplitude_errs: tuple[float, ...]
    offset_errs: tuple[float, ...]
    residual_norm: float
    covariance: np.ndarray = field(repr=False)
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "g": self.g,
            "kappa": self.kappa,
            "g_err": self.g_err,
            "kappa_err": self.kappa_err,
            "amplitudes": list(self.amplitudes),
            "offsets": list(self.offsets),
            "amplitude_errs": list(self.amplitude_errs),
            "offset_errs": list(self.offset_errs),
            "residual_norm": self.residual_norm,
            "covariance": np.asarray(self.covariance).tolist(),
            "iterations": self.iterations,
        }


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    jac: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 200,
    gtol: float = 1e-8,
    xtol: float = 1e-12,
    lam0: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Damped Gauss-Newton minimization of ``||residual(x)||^2``.

    The damping starts at ``lam0`` and is divided by 10 after an accepted
    step and multiplied by 10 after a rejected one. Converges when the
    gradient norm falls below ``gtol`` times its initial value or the step
    becomes negligible.

    Returns the solution, the Jacobian there and the iteration count.

    Raises
    ------
    FitError
        After ``max_iter`` iterations without convergence.
    """
    x = np.asarray(x0, dtype=float).copy()

    def fd_jac(x):
        r0 = residual(x)
        J = np.empty((r0.size, x.size))
        for k in range(x.size):
            h = 1e-6 * max(abs(x[k]), 1e-8)
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            J[:, k] = (residual(xp) - residual(xm)) / (2 * h)
        return J

    jac = jac or fd_jac
    r = residual(x)
    cost = float(r @ r)
    J = jac(x)
    grad = J.T @ r
    g0 = max(np.linalg.norm(grad), 1e-300)
    lam = lam0
    for it in range(1, max_iter + 1):
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag == 0] = 1.0
        try:
            step = np.linalg.solve(A + lam * np.diag(diag), -grad)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        xn = x + step
        rn = residual(xn)
        cn = float(rn @ rn)
        if np.isfinite(cn) and cn < cost:
            x, r, cost = xn, rn, cn
            J = jac(x)
            grad = J.T @ r
            lam = max(lam / 10, 1e-12)
            if np.linalg.norm(grad) < gtol * g0:
                return x, J, it
            if np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol):
                return x, J, it
        else:
            lam *= 10
            if lam > 1e16:
                # no descent direction left: stationary point
                return x, J, it
    raise FitError(
        f"no convergence after {max_iter} iterations",
        best=x,
        diagnostics={"cost": cost, "gradient_norm": float(np.linalg.norm(grad)), "lambda": lam},
    )


def _unit_probe(g: float, kappa: float, base: CavityParams, dp: np.ndarray, n_atoms: int) -> np.ndarray:
    """Probe response normalized to unit peak for the empty cavity."""
    kt = kappa / 2 + 1j * (base.delta_c - dp)
    gt = base.gamma / 2 + 1j * (base.delta_a - dp)
    return np.abs((kappa / 2) / (kt * (1 + n_atoms * g * g / (kt * gt)))) ** 2


def fit_cavity_params(
    spectra: Sequence[Spectrum],
    initial: Mapping[str, float],
    base: CavityParams | None = None,
    sigmas: Sequence[np.ndarray] | None = None,
    max_iter: int = 200,
) -> FitResult:
    """Simultaneous fit of probe spectra sharing ``g`` and ``kappa``.

    Each trace gets a free amplitude and offset on top of the analytic
    weak-probe shape for its atom number (equal couplings). ``gamma`` and
    the detuning offsets come from ``base``. With ``sigmas`` the residuals
    are weighted and the covariance is absolute; otherwise it is scaled by
    the reduced chi-square.

    Raises
    ------
    FitError
        On non-convergence or when the parameters are not identifiable from
        the data (for example a flat signal).
    """
    if not spectra:
        raise ValueError("need at least one spectrum")
    base = base or CavityParams()
    for s in spectra:
        if s.n_atoms is None:
            raise ValueError("every spectrum needs an n_atoms label")
    g0, k0 = float(initial["g"]), float(initial["kappa"])
    if not (np.isfinite(g0) and np.isfinite(k0)):
        raise ValueError("initial guess must be finite")
    # work with traces scaled to unit peak so that all parameters are of order one
    scales = [float(np.max(np.abs(s.signal))) or 1.0 for s in spectra]
    ws = [np.ones_like(s.signal) if sigmas is None else sc / np.asarray(sg, dtype=float)
          for s, sg, sc in zip(spectra, sigmas or [None] * len(spectra), scales)]
    spectra = [Spectrum(s.detunings, s.signal / sc, s.axis, s.method, s.n_atoms)
               for s, sc in zip(spectra, scales)]

    x0 = [g0, k0]
    for s in spectra:
        shape = _unit_probe(g0, k0, base, s.detunings, s.n_atoms)
        amp = (np.max(s.signal) - np.min(s.signal)) / max(np.max(shape) - np.min(shape), 1e-300)
        x0 += [amp, float(np.min(s.signal))]
    x0 = np.asarray(x0)

    def residual(x):
        out = []
        for i, (s, w) in enumerate(zip(spectra, ws)):
            m = x[2 + 2 * i] * _unit_probe(x[0], x[1], base, s.detunings, s.n_atoms) + x[3 + 2 * i]
            out.append((m - s.signal) * w)
        return np.concatenate(out)

    def jac(x):
        # finite differences for g and kappa, exact columns for the linear parameters
        cols = []
        for k in (0, 1):
            h = 1e-6 * max(abs(x[k]), 1.0)
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            cols.append((residual(xp) - residual(xm)) / (2 * h))
        J = np.zeros((sum(s.signal.size for s in spectra), x.size))
        J[:, 0], J[:, 1] = cols
        row = 0
        for i, (s, w) in enumerate(zip(spectra, ws)):
            sl = slice(row, row + s.signal.size)
            J[sl, 2 + 2 * i] = _unit_probe(x[0], x[1], base, s.detunings, s.n_atoms) * w
            J[sl, 3 + 2 * i] = w
            row += s.signal.size
        return J

    x, J, it = levenberg_marquardt(residual, x0, jac=jac, max_iter=max_iter)
    r = residual(x)
    A = J.T @ J
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise FitError("parameters not identifiable from the data (singular Jacobian)",
                       best=x, diagnostics={"singular_values": sv.tolist()})
    cov = np.linalg.inv(A)
    if sigmas is None:
        dof = max(r.size - x.size, 1)
        cov = cov * float(r @ r) / dof
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    sc = np.repeat(scales, 2)
    x[2:] *= sc
    err[2:] *= sc
    cov[2:, :] *= sc[:, None]
    cov[:, 2:] *= sc[None, :]
    return FitResult(
        g=float(abs(x[0])),
        kappa=float(x[1]),
        g_err=float(err[0]),
        kappa_err=float(err[1]),
        amplitudes=tuple(float(v) for v in x[2::2]),
        offsets=tuple(float(v) for v in x[3::2]),
        amplitude_errs=tuple(float(v) for v in err[2::2]),
        offset_errs=tuple(float(v) for v in err[3::2]),
        residual_norm=float(np.linalg.norm(r)),
        covariance=cov,
        iterations=it,
    )


# ----------------------------------------------------------------------------
# loss spectra


def loss_spectrum(
    p: Rb87Params,
    initial_state: str,
    pulse_time: float,
    detunings,
    cavity_detunings=None,
    method: str = "krylov",
) -> Spectrum | np.ndarray:
    """Detectable-error population after a drive pulse versus drive detuning.

    ``initial_state`` is ``"10"`` or ``"11"``. With ``cavity_detunings`` a
    2-D array ``[cavity, drive]`` is returned instead of a :class:`Spectrum`.
    """
    idx = {"10": 2, "11": 3}
    if initial_state not in idx:
        raise ValueError(f"initial_state must be '10' or '11', got {initial_state!r}")
    if pulse_time <= 0:
        raise ValueError("pulse_time must be positive")
    dp = np.asarray(detunings, dtype=float)
    rho0 = np.zeros((28, 28), dtype=complex)
    rho0[idx[initial_state], idx[initial_state]] = 1.0
    det = list(RB87_DETECTABLE)

    def point(delta, dc):
        if p.omega == 0:
            return 0.0
        r = evolve(build_rb87_two_atom(p.with_(delta=delta, delta_cavity=dc)), rho0,
                   pulse_time, method=method).data
        return float(np.real(np.trace(r[np.ix_(det, det)])))

    if cavity_detunings is None:
        sig = np.clip([point(d, p.delta_cavity) for d in dp], 0.0, None)
        return Spectrum(dp, sig, "probe", "numeric-evolution", 2,
                        {"initial_state": initial_state, "pulse_time_us": pulse_time})
    dcs = np.asarray(cavity_detunings, dtype=float)
    return np.array([[point(d, dc) for d in dp] for dc in dcs])
