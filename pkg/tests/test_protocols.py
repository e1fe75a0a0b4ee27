import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from cavqed.models import Rb87Params, build_rb87_two_atom
from cavqed.protocols import (
    DrivePulse,
    MeasurementSet,
    PulseSchedule,
    Rotation,
    Wait,
    bell_fidelity,
    bell_state,
    carr_purcell_schedule,
    carve_operator,
    carving_ceiling_rb87,
    carving_outcome_full,
    carving_outcome_rb87,
    carving_outcome_simplified,
    carving_rates_rb87,
    carving_rates_simplified,
    cz_gate_full,
    cz_gate_metrics_rb87,
    cz_gate_metrics_simplified,
    cz_operating_point_rb87,
    parity_and_trace,
    populations_from_density_matrix,
    rotation,
    run_pulse_sequence,
    single_pulse_operator,
)

GAMMA = 6.0


def random_rho(rng, trace=1.0):
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    r = m @ m.conj().T
    return trace * r / np.trace(r)


# ---------------------------------------------------------------- simplified carving

def test_simplified_rates():
    g10, g11 = carving_rates_simplified(0.6, GAMMA, 101.0)
    assert g11 == pytest.approx(GAMMA / 10100, rel=1e-12)
    assert g10 / g11 == pytest.approx(101 / 2, rel=1e-12)
    assert carving_rates_simplified(0.0, GAMMA, 101.0) == (0.0, 0.0)


def test_carve_operator_identities():
    g10, g11, t = 0.3, 0.01, 7.0
    assert np.allclose(carve_operator(g10, g11, 0.0).data, np.eye(4))
    xx = np.kron(rotation("x", np.pi), rotation("x", np.pi))
    u = single_pulse_operator(g10, g11, t).data
    assert np.allclose(xx @ u @ xx @ u, carve_operator(g10, g11, t).data, atol=1e-14)
    long = carve_operator(g10, g11, 2000.0).data @ (np.ones(4) / 2)
    long /= np.linalg.norm(long)
    assert np.allclose(long, bell_state("phi+"), atol=1e-12)


def test_simplified_carving_values():
    C = 101.0
    om = 0.6
    t = 6 * GAMMA / om**2
    o = carving_outcome_simplified(om, GAMMA, C, t)
    assert o.success_probability == pytest.approx(0.49606, abs=5e-5)
    assert o.fidelity == pytest.approx(0.94982, abs=5e-5)
    z = carving_outcome_simplified(om, GAMMA, C, 0.0)
    assert z.fidelity == 0.5 and z.success_probability == 1.0


def test_simplified_carving_identity_and_monotonicity():
    ts = np.linspace(0, 400, 401)
    out = [carving_outcome_simplified(0.6, GAMMA, 101.0, t) for t in ts]
    f = np.array([o.fidelity for o in out])
    p = np.array([o.success_probability for o in out])
    ident = f * 2 * p - np.exp(-0.36 * ts / (101 * GAMMA))
    assert np.max(np.abs(ident)) <= 1e-12
    assert np.all(np.diff(f) > 0) and np.all(np.diff(p) < 0)


# ---------------------------------------------------------------- Rb-87 carving

def test_rb87_carving_zero_time():
    o = carving_outcome_rb87(Rb87Params(), 0.0)
    assert o.fidelity == 0.5 and o.success_probability == 1.0


def test_rb87_rate_consistency():
    p = Rb87Params()
    n = carving_rates_rb87(p, "numeric")
    pr = carving_rates_rb87(p, "printed")
    assert n.g4 == pytest.approx(n.g4d + n.g4nd)
    assert n.g3d == pytest.approx(pr.g3d, rel=0.01)
    assert n.delta4 == pytest.approx(pr.delta4, rel=1e-3)
    with pytest.raises(ValueError):
        carving_rates_rb87(p, "guess")


def test_rb87_carving_ceiling():
    for rates in ("printed", "numeric"):
        o = carving_ceiling_rb87(Rb87Params(), rates)
        assert o.fidelity == pytest.approx(0.963, abs=0.01)
    assert carving_ceiling_rb87(Rb87Params()).fidelity == pytest.approx(0.96220, abs=5e-5)


def test_rb87_density_matrix_closure():
    o = carving_outcome_rb87(Rb87Params(), 60.0)
    f, _ = bell_fidelity(populations_from_density_matrix(o.density_matrix), "phi+")
    assert f == pytest.approx(o.fidelity, abs=1e-6)


def test_full_carving_matches_effective():
    p = Rb87Params(omega=GAMMA / 10)
    for t in (20.0, 60.0):
        full = carving_outcome_full(p, t)
        eff = carving_outcome_rb87(p, t, rates="numeric")
        assert abs(full.fidelity - eff.fidelity) <= 0.02
        assert abs(full.success_probability - eff.success_probability) <= 0.02


# ---------------------------------------------------------------- pulse sequences

def _rb87_start():
    sys = build_rb87_two_atom(Rb87Params())
    rho0 = np.zeros((sys.dim, sys.dim), dtype=complex)
    rho0[0, 0] = 1.0
    return sys, rho0


def test_two_half_rotations_equal_pi():
    sys, rho0 = _rb87_start()
    a = run_pulse_sequence(sys, PulseSchedule([Rotation("x", np.pi / 2)] * 2), rho0).data
    b = run_pulse_sequence(sys, PulseSchedule([Rotation("x", np.pi)]), rho0).data
    assert np.allclose(a, b, atol=1e-14)
    assert a[3, 3].real == pytest.approx(1.0)


def test_zero_tau_is_pure_rotation():
    sys, rho0 = _rb87_start()
    out = run_pulse_sequence(sys, carr_purcell_schedule(0.0), rho0).data
    u = np.kron(rotation("x", 3 * np.pi), rotation("x", 3 * np.pi))
    ref = u @ rho0[:4, :4] @ u.conj().T
    assert np.allclose(out[:4, :4], ref, atol=1e-14)


def test_carr_purcell_cancels_linear_phase():
    sys, rho0 = _rb87_start()
    ref = run_pulse_sequence(sys, carr_purcell_schedule(3.0, scale=0.0), rho0).data
    for rate in (0.7, 5.0):
        out = run_pulse_sequence(sys, carr_purcell_schedule(3.0, scale=0.0, phase_rate=rate), rho0).data
        assert np.allclose(out, ref, atol=1e-10)
    echo_free = PulseSchedule([Rotation("x", np.pi / 2), DrivePulse(3.0, 0.0, 0.7), Rotation("x", np.pi / 2)])
    plain = PulseSchedule([Rotation("x", np.pi / 2), Wait(3.0), Rotation("x", np.pi / 2)])
    assert not np.allclose(run_pulse_sequence(sys, echo_free, rho0).data,
                           run_pulse_sequence(sys, plain, rho0).data, atol=1e-3)


def test_rotation_error_option():
    sys, rho0 = _rb87_start()
    bad = run_pulse_sequence(sys, PulseSchedule([Rotation("x", np.pi, "A", angle_error=0.1)]), rho0).data
    assert 0.9 < bad[2, 2].real < 1.0
    with pytest.raises(ValueError):
        Rotation("w", 1.0)
    with pytest.raises(ValueError):
        DrivePulse(-1.0)


# ---------------------------------------------------------------- simplified CZ

@pytest.mark.parametrize("C", [25.0, 101.0, 400.0])
def test_simplified_cz_optimum(C):
    f = lambda om: -cz_gate_metrics_simplified(GAMMA, C=C, omega=om).f_uncorr
    res = minimize_scalar(f, bounds=(0.1 * GAMMA, 50 * GAMMA), method="bounded",
                          options={"xatol": 1e-10})
    assert res.x == pytest.approx(np.sqrt(C / 2) * GAMMA, rel=0.02)
    m = cz_gate_metrics_simplified(GAMMA, C=C)
    assert m.omega_opt == pytest.approx(np.sqrt(C / 2) * GAMMA, rel=1e-12)
    assert m.f_corr >= m.f_uncorr


def test_simplified_cz_values():
    m = cz_gate_metrics_simplified(GAMMA, C=101.0)
    assert m.omega_opt / GAMMA == pytest.approx(7.106, abs=1e-3)
    x = np.pi / np.sqrt(202)
    assert m.details["f_uncorr_approx"] == pytest.approx((1 - x / 2) ** 2, rel=1e-12)
    assert m.details["f_uncorr_approx"] == pytest.approx(0.791, abs=1e-3)
    assert m.alpha == pytest.approx(np.exp(-x), rel=1e-12)
    assert m.details["f_corr_balanced"] == 1.0
    assert m.details["p_success_balanced"] == pytest.approx(np.exp(-2 * x), rel=1e-12)
    assert m.details["f_corr_approx"] > 1.0
    e = cz_gate_metrics_simplified(GAMMA, g=100.0, kappa=65.0, form="exact")
    assert e.omega_opt == pytest.approx(np.sqrt(100.0**2 / (2 * 65 / 6 - 1)))


def test_simplified_cz_rejects():
    for kw in ({"C": -1.0}, {"C": 101.0, "omega": 0.0}, {}, {"C": 101.0, "form": "other"}):
        with pytest.raises(ValueError):
            cz_gate_metrics_simplified(GAMMA, **kw)
    with pytest.raises(ValueError):
        cz_gate_metrics_simplified(-1.0, C=101.0)


# ---------------------------------------------------------------- Rb-87 CZ

def test_rb87_cz_operating_point():
    m = cz_operating_point_rb87(Rb87Params())
    assert m.f_corr == pytest.approx(0.78, abs=0.03)
    assert m.f_corr == pytest.approx(0.76728, abs=1e-4)
    assert m.omega_opt == pytest.approx(4.8986, rel=1e-3)


def test_rb87_cz_weak_drive_limit():
    f = [cz_gate_metrics_rb87(Rb87Params(omega=om)).f_uncorr for om in (1e-3, 1e-4)]
    assert f[-1] == pytest.approx(9 / 16, abs=1e-3)


def test_rb87_cz_success_decreases_with_time():
    p = Rb87Params(omega=4.9)
    t0 = np.sqrt(3) * np.pi / p.omega
    pg = [cz_gate_metrics_rb87(p, t).p_success for t in np.linspace(t0, 10 * t0, 50)]
    assert np.all(np.diff(pg) < 0)


def test_error_detection_helps():
    for om in np.linspace(0.5, 10.0, 20):
        m = cz_gate_metrics_rb87(Rb87Params(omega=om))
        assert m.f_corr > m.f_uncorr
    for C in (10.0, 50.0, 101.0, 400.0):
        for om in (2.0, 10.0, 40.0):
            m = cz_gate_metrics_simplified(GAMMA, C=C, omega=om)
            assert m.f_corr >= m.f_uncorr


@pytest.mark.xfail(strict=True, reason="full model post-selected fidelity is 2.15% below the effective value")
def test_rb87_cz_full_matches_effective():
    eff = cz_operating_point_rb87(Rb87Params())
    full = cz_gate_full(Rb87Params(omega=eff.omega_opt))
    assert abs(full.f_corr - eff.f_corr) <= 0.02


# ---------------------------------------------------------------- Bell fidelity

def test_parity_and_trace_examples():
    flat = MeasurementSet({b: [0.25] * 4 for b in "xyz"})
    assert parity_and_trace(flat, "x") == (0.0, 1.0)
    corr = MeasurementSet({b: [0.5, 0, 0, 0.5] for b in "xyz"})
    assert parity_and_trace(corr, "z") == (1.0, 1.0)


def test_bell_fidelity_ideal_and_mixed():
    ideal = MeasurementSet({"x": [0, 0.5, 0.5, 0], "y": [0.5, 0, 0, 0.5], "z": [0.5, 0, 0, 0.5]})
    assert bell_fidelity(ideal, "phi-")[0] == pytest.approx(1.0, abs=1e-15)
    mixed = populations_from_density_matrix(np.eye(4) / 4)
    for target in ("phi+", "phi-"):
        assert bell_fidelity(mixed, target)[0] == 0.25


def test_bell_fidelity_closure_and_bounds():
    rng = np.random.default_rng(11)
    for _ in range(200):
        tr = rng.uniform(0.3, 1.0)
        rho = random_rho(rng, tr)
        m = populations_from_density_matrix(rho)
        traces = [parity_and_trace(m, b)[1] for b in "xyz"]
        assert np.ptp(traces) <= 1e-12 and traces[0] == pytest.approx(tr)
        for name in ("phi+", "phi-"):
            phi = bell_state(name)
            assert bell_fidelity(m, name)[0] == pytest.approx(np.real(phi.conj() @ rho @ phi), abs=1e-6)
        pz, t = parity_and_trace(m, "z")
        total = bell_fidelity(m, "phi+")[0] + bell_fidelity(m, "phi-")[0]
        assert total <= t / 2 + abs(pz) / 2 + 1e-12


def test_bell_fidelity_uncertainty():
    m = populations_from_density_matrix(np.outer(bell_state("phi+"), bell_state("phi+").conj()) * 0.9
                                        + 0.1 * np.eye(4) / 4, shots=1000)
    f, s = bell_fidelity(m, "phi+")
    assert f == pytest.approx(0.9 + 0.1 / 4)
    assert 0 < s < 0.05
    with pytest.raises(ValueError):
        MeasurementSet({"x": [0.25] * 4, "y": [0.25] * 4})
    with pytest.raises(ValueError):
        bell_fidelity(m, "ghz")
