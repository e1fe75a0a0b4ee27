from fractions import Fraction

import pytest
from sympy import Rational
from sympy.physics.wigner import clebsch_gordan as sympy_cg, wigner_6j as sympy_6j

from cavqed.atomic_data import (
    ERROR_STATES,
    EXCITED_E,
    HyperfineLevel,
    QUBIT_0,
    QUBIT_1,
    branching_fractions,
    branching_table,
    clebsch_gordan_squared,
    dark_state_detectability,
    detectability_split,
    dipole_ratio_squared,
    excited_levels,
    ground_levels,
    rb87_branching,
    wigner_6j_squared,
)

H = Rational(1, 2)


def test_cg_against_sympy():
    for j1 in (1, 2):
        for J in (0, 1, 2, 3):
            for m1 in range(-j1, j1 + 1):
                for q in (-1, 0, 1):
                    M = m1 + q
                    if abs(M) > J:
                        continue
                    ref = sympy_cg(j1, 1, J, m1, q, M) ** 2
                    assert clebsch_gordan_squared(j1, m1, 1, q, J, M) == Fraction(int(ref.p), int(ref.q))


def test_6j_against_sympy():
    for F in (1, 2):
        for Fp in (0, 1, 2, 3):
            ref = sympy_6j(H, 3 * H, 1, Fp, F, 3 * H) ** 2
            assert wigner_6j_squared(Fraction(1, 2), Fraction(3, 2), 1, Fp, F, Fraction(3, 2)) == \
                Fraction(int(ref.p), int(ref.q))


def _brute_force(e):
    """Independent sympy evaluation of the decay fractions."""
    out = {}
    for g in ground_levels():
        q = e.mF - g.mF
        if abs(q) > 1:
            continue
        w = (4 * (2 * g.F + 1) * sympy_6j(H, 3 * H, 1, e.F, g.F, 3 * H) ** 2
             * sympy_cg(g.F, 1, e.F, g.mF, q, e.mF) ** 2)
        if w:
            out[g] = float(w)
    return out


@pytest.mark.parametrize("e", excited_levels(), ids=str)
def test_branching_matches_brute_force_and_sums_to_one(e):
    fr = branching_fractions(e)
    ref = _brute_force(e)
    assert fr.keys() == ref.keys()
    for g in fr:
        assert fr[g] == pytest.approx(ref[g], abs=1e-14)
    assert abs(sum(fr.values()) - 1) <= 1e-12


def test_branching_e_row():
    fr = branching_fractions(EXCITED_E)
    assert QUBIT_0 not in fr
    assert fr[HyperfineLevel("ground", 1, 1)] == pytest.approx(5 / 12)
    assert fr[HyperfineLevel("ground", 1, -1)] == pytest.approx(5 / 12)
    assert fr[HyperfineLevel("ground", 2, 1)] == pytest.approx(1 / 20)
    assert fr[HyperfineLevel("ground", 2, -1)] == pytest.approx(1 / 20)
    assert fr[QUBIT_1] == pytest.approx(1 / 15)


def test_stretched_cycling():
    assert branching_fractions(HyperfineLevel("excited", 3, 3)) == {HyperfineLevel("ground", 2, 2): 1.0}


def test_mirror_symmetry():
    t = branching_table()
    for e, row in t.rows.items():
        mirror = t.rows[HyperfineLevel("excited", e.F, -e.mF)]
        for (g, q), v in row.items():
            assert mirror[(HyperfineLevel("ground", g.F, -g.mF), -q)] == v


def test_invalid_levels():
    with pytest.raises(ValueError):
        HyperfineLevel("ground", 3, 0)
    with pytest.raises(ValueError):
        HyperfineLevel("excited", 1, 2)
    with pytest.raises(ValueError):
        branching_fractions(QUBIT_0)


def test_detectability():
    assert detectability_split(EXCITED_E, ground_levels()) == (1.0, 0.0)
    d, nd = detectability_split(EXCITED_E, ERROR_STATES)
    assert nd == pytest.approx(0.17, abs=0.02)
    assert nd == pytest.approx(1 / 6, abs=1e-15)
    assert dark_state_detectability() == pytest.approx(0.915, abs=0.005)


def test_rb87_branching_conventions():
    b = rb87_branching()
    assert (b.d, b.nd) == pytest.approx((0.9, 0.1))
    assert (b.d3, b.nd3) == pytest.approx((0.6, 0.4))
    s = rb87_branching(recycled=())
    assert (s.d, s.nd, s.d3, s.nd3) == pytest.approx((5 / 6, 1 / 6, 0.0, 1.0))


def test_dipole_ratio():
    r = dipole_ratio_squared(QUBIT_1, HyperfineLevel("excited", 3, 0), EXCITED_E)
    assert r == pytest.approx(21.0)
