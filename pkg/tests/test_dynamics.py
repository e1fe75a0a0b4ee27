import numpy as np
import pytest

from cavqed.dynamics import (
    SteadyStateError,
    StepSizeUnderflowError,
    adiabatic_eliminate,
    evolve,
    liouvillian,
    liouvillian_apply,
    steady_state,
)
from cavqed.models import (
    RB87_DETECTABLE,
    RB87_UNDETECTABLE,
    CavityParams,
    LindbladSystem,
    Rb87Params,
    build_rb87_two_atom,
    build_tavis_cummings,
)
from cavqed.operators import Operator, annihilation, check_density_matrix, sigma_x, transition
from cavqed.protocols import carving_rates_rb87


def two_level(gamma=0.0, rabi=0.0, delta=0.0):
    """H = delta |e><e| + (rabi/2) sigma_x with basis (g, e)."""
    h = delta * transition(2, 1, 1) + 0.5 * rabi * sigma_x()
    cops = (np.sqrt(gamma) * transition(2, 0, 1),) if gamma else ()
    return LindbladSystem(h, cops, ("g", "e"))


def test_liouvillian_trivial_cases():
    sys = LindbladSystem(Operator(np.zeros((3, 3))))
    rho = np.diag([0.2, 0.3, 0.5])
    assert np.array_equal(liouvillian_apply(sys, rho).data, np.zeros((3, 3)))
    dec = two_level(gamma=6.0)
    d = liouvillian_apply(dec, np.diag([0.0, 1.0])).data
    assert d[1, 1] == pytest.approx(-6.0)
    with pytest.raises(ValueError):
        liouvillian_apply(dec, np.eye(3))


def test_liouvillian_traceless_and_dense_agrees():
    sys = build_tavis_cummings(CavityParams(g_b=80, omega_probe=2.0, omega_side_a=1.0), 2, 3)
    rng = np.random.default_rng(0)
    m = rng.normal(size=(sys.dim,) * 2) + 1j * rng.normal(size=(sys.dim,) * 2)
    rho = m @ m.conj().T
    rho /= np.trace(rho)
    out = liouvillian_apply(sys, rho).data
    assert abs(np.trace(out)) <= 1e-10
    assert np.allclose(liouvillian(sys) @ rho.ravel(), out.ravel())


def test_steady_state_ground_without_drive():
    rho = steady_state(build_tavis_cummings(CavityParams(g_a=100), 1, 2)).data
    ref = np.zeros_like(rho)
    ref[0, 0] = 1
    assert np.allclose(rho, ref, atol=1e-12)


def test_steady_state_empty_cavity_matches_lorentzian():
    kappa, om = 65.0, 0.65
    for dc in np.linspace(-150, 150, 13):
        p = CavityParams(g_a=0.0, kappa=kappa, delta_c=dc, omega_probe=om)
        sys = build_tavis_cummings(p, 1, 3)
        rho = steady_state(sys)
        n = np.kron(np.diag([0, 1, 2]), np.eye(2))
        ref = om**2 / (kappa**2 / 4 + dc**2)
        assert np.real(np.trace(n @ rho.data)) == pytest.approx(ref, rel=1e-3)


def test_steady_state_one_atom_suppression():
    om = 0.065
    base = CavityParams(g_a=100, kappa=65, gamma=6, omega_probe=om)
    n = np.kron(np.diag([0, 1, 2]), np.eye(2))
    empty = np.real(np.trace(n @ steady_state(build_tavis_cummings(base.with_(g_a=0.0), 1, 3)).data))
    full = np.real(np.trace(n @ steady_state(build_tavis_cummings(base, 1, 3)).data))
    C = 4 * 100**2 / (65 * 6)
    assert empty / full == pytest.approx((1 + C) ** 2, rel=0.01)


def test_steady_state_residual():
    sys = build_tavis_cummings(CavityParams(g_b=100, omega_side_a=5, omega_side_b=5, phi_rel=np.pi), 2, 3)
    rho = steady_state(sys)
    check_density_matrix(rho)
    res = np.max(np.abs(liouvillian_apply(sys, rho).data))
    assert res <= 1e-9 * np.max(np.abs(sys.hamiltonian.data))


def test_steady_state_degenerate():
    sys = LindbladSystem(Operator(np.diag([0.0, 1.0])))
    with pytest.raises(SteadyStateError) as e:
        steady_state(sys)
    assert e.value.degeneracy == 2


def test_evolve_zero_time_exact():
    sys = two_level(gamma=1.0, rabi=2.0)
    rho0 = np.array([[0.3, 0.1j], [-0.1j, 0.7]])
    for m in ("rk4", "expm", "krylov"):
        assert np.array_equal(evolve(sys, rho0, 0.0, method=m).data, rho0)
    with pytest.raises(ValueError):
        evolve(sys, rho0, -1.0)


@pytest.mark.parametrize("method", ["rk4", "expm", "krylov"])
def test_rabi_inversion(method):
    om = 2.0
    r = evolve(two_level(rabi=om), np.diag([1.0, 0.0]), np.pi / om, method=method).data
    assert abs(r[1, 1] - 1) <= 1e-6


@pytest.mark.parametrize("method", ["rk4", "expm", "krylov"])
def test_decay(method):
    gamma = 6.0
    for t in (0.05, 0.2, 0.7):
        r = evolve(two_level(gamma=gamma), np.diag([0.0, 1.0]), t, method=method).data
        assert abs(r[1, 1] - np.exp(-gamma * t)) <= 1e-6


def test_trace_positivity_and_semigroup():
    p = Rb87Params()
    sys = build_rb87_two_atom(p)
    psi = np.zeros(28, dtype=complex)
    psi[:4] = 0.5
    rho0 = np.outer(psi, psi.conj())
    r1 = evolve(sys, rho0, 1.0).data
    check_density_matrix(r1, tol_trace=1e-8, tol_pos=1e-6)
    r2 = evolve(sys, r1, 1.5).data
    direct = evolve(sys, rho0, 2.5).data
    assert np.max(np.abs(r2 - direct)) <= 1e-7
    assert np.max(np.abs(evolve(sys, rho0, 2.5, method="expm").data - direct)) <= 1e-7


def test_step_underflow():
    with pytest.raises(StepSizeUnderflowError):
        evolve(two_level(rabi=50.0), np.diag([1.0, 0.0]), 10.0, max_steps=100)


def test_light_shift_matches_perturbation_theory():
    om, gamma = 0.5, 6.0
    for delta in (-40.0, -5.0, 3.0, 25.0):
        sys = build_tavis_cummings(CavityParams(g_a=0.0, gamma=gamma, delta_a=delta, omega_side_a=om), 1, 2)
        eff = adiabatic_eliminate(sys, ground=(0, 2), excited=(1, 3))
        shift = eff.energy(0)
        assert shift == pytest.approx(-om**2 * delta / (delta**2 + gamma**2 / 4), rel=1e-12)
        assert eff.rate(0) == pytest.approx(om**2 * gamma / (delta**2 + gamma**2 / 4), rel=1e-12)


def test_adiabatic_elimination_large_cooperativity_limits():
    p = Rb87Params(g=3000.0)
    n, pr = carving_rates_rb87(p, "numeric"), carving_rates_rb87(p, "printed")
    assert n.g3d == pytest.approx(pr.g3d, rel=0.01)
    assert n.delta4 == pytest.approx(9 * p.omega**2 / p.delta3, rel=1e-3)
    assert n.g4d == pytest.approx(pr.g4d, rel=0.02)


def test_blockaded_cavity_loss_term():
    # cavity-assisted loss of |11> against Omega^2/(2 gamma C') with C' = g^2/(kappa gamma)
    for g in (300.0, 1000.0):
        p = Rb87Params(g=g)
        n = carving_rates_rb87(p, "numeric")
        cav = n.g4d - 9 * p.omega**2 / p.delta3**2 * p.gamma_3d
        c_prime = g**2 / (p.kappa * p.gamma)
        assert cav == pytest.approx(p.omega**2 / (2 * p.gamma * c_prime), rel=0.01)


def test_effective_system_is_valid_and_uncoupled():
    eff = adiabatic_eliminate(build_rb87_two_atom(Rb87Params()))
    assert eff.hamiltonian.is_hermitian()
    assert all(eff.rate(i) >= 0 for i in eff.ground)
    x = eff.cross_terms(2, 3)
    scale = abs(eff.energy(3))
    assert x["hamiltonian"] <= 1e-14 * scale and x["dissipative"] <= 1e-14 * eff.rate(3)
    for i in (0, 1):
        assert eff.rate(i) == 0.0 and eff.energy(i) == 0.0


def test_effective_vs_full_evolution():
    p = Rb87Params(omega=0.6)
    full = build_rb87_two_atom(p)
    eff = adiabatic_eliminate(full)
    psi = np.zeros(28, dtype=complex)
    psi[:4] = 0.5
    rho0 = np.outer(psi, psi.conj())
    loc = [eff.local(i) for i in eff.ground]
    rho0_eff = rho0[np.ix_(eff.ground, eff.ground)]
    groups = {"qubit": list(range(4)), "det": list(RB87_DETECTABLE), "und": list(RB87_UNDETECTABLE)}
    for t in (5.0, 20.0, 45.0):
        rf = np.real(np.diag(evolve(full, rho0, t, method="krylov").data))
        re = np.real(np.diag(evolve(eff.to_lindblad(), rho0_eff, t, method="krylov").data))
        for name, idx in groups.items():
            pf = rf[idx]
            pe = re[[eff.local(i) for i in idx]]
            assert np.max(np.abs(pf - pe)) <= 0.01, (t, name)
    assert loc == list(range(len(eff.ground)))


def test_singular_excited_block():
    from cavqed.dynamics import SingularExcitedBlockError
    h = Operator(np.zeros((2, 2)))
    sys = LindbladSystem(h + 0.1 * sigma_x(), drive=0.1 * sigma_x())
    with pytest.raises(SingularExcitedBlockError):
        adiabatic_eliminate(sys, ground=(0,), excited=(1,))


def test_compiled_and_python_kernels_agree():
    from cavqed import kernels
    from cavqed.dynamics import _kernel_args

    compiled = kernels.compiled_rk4_propagate()
    if compiled is None:
        pytest.skip("compiled extension not built")
    sys = build_tavis_cummings(CavityParams(g_b=100, omega_probe=3.0, omega_side_a=2.0), 2, 3)
    args, _ = _kernel_args(sys)
    rho0 = np.zeros((sys.dim, sys.dim), dtype=complex)
    rho0[0, 0] = 1
    a = np.asarray(compiled(rho0, *args, 1e-3, 200))
    b = kernels.python_rk4_propagate(rho0, *args, 1e-3, 200)
    assert np.max(np.abs(a - b)) <= 1e-12
