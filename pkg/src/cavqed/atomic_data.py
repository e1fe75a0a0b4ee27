"""Rb-87 D2 hyperfine levels and spontaneous-emission branching.

Clebsch-Gordan coefficients and 6j symbols are evaluated from the Racah
closed forms in exact rational arithmetic, so every branching fraction is an
exact :class:`~fractions.Fraction` before conversion to float.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial
from typing import Iterable, Mapping

__all__ = [
    "NUCLEAR_SPIN",
    "J_GROUND",
    "J_EXCITED",
    "GROUND_HYPERFINE_MHZ",
    "EXCITED_HYPERFINE_MHZ",
    "HyperfineLevel",
    "BranchingTable",
    "Rb87Branching",
    "clebsch_gordan",
    "clebsch_gordan_squared",
    "wigner_6j_squared",
    "ground_levels",
    "excited_levels",
    "branching_fractions",
    "branching_table",
    "detectability_split",
    "dark_state_detectability",
    "rb87_branching",
    "dipole_ratio_squared",
    "QUBIT_0",
    "QUBIT_1",
    "ERROR_STATES",
    "EXCITED_E",
    "EXCITED_E3",
]

NUCLEAR_SPIN = Fraction(3, 2)
J_GROUND = Fraction(1, 2)
J_EXCITED = Fraction(3, 2)

# Published Rb-87 D2 hyperfine offsets (MHz). Ground: relative to F=1.
# Excited: relative to F'=1, so F'=2 and F'=3 give the splittings used by the
# two-atom model.
GROUND_HYPERFINE_MHZ = {1: 0.0, 2: 6834.682611}
EXCITED_HYPERFINE_MHZ = {0: -72.2180, 1: 0.0, 2: 156.947, 3: 423.597}


def _frac(x) -> Fraction:
    f = Fraction(x).limit_denominator(4)
    if f.denominator not in (1, 2):
        raise ValueError(f"angular momentum must be integer or half-integer, got {x}")
    return f


def _int(x: Fraction) -> int:
    if x.denominator != 1:
        raise ValueError(f"non-integer factorial argument {x}")
    return int(x)


@lru_cache(maxsize=None)
def _cg_parts(j1: Fraction, m1: Fraction, j2: Fraction, m2: Fraction,
              J: Fraction, M: Fraction) -> tuple[int, Fraction]:
    """Sign and square of <j1 m1; j2 m2 | J M> as an exact fraction."""
    if M != m1 + m2:
        return 0, Fraction(0)
    if not abs(j1 - j2) <= J <= j1 + j2 or (j1 + j2 + J).denominator != 1:
        return 0, Fraction(0)
    if abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return 0, Fraction(0)
    if any(x.denominator != 1 for x in (j1 - m1, j2 - m2, J - M)):
        return 0, Fraction(0)
    pre = Fraction(
        _int(2 * J + 1)
        * factorial(_int(J + j1 - j2))
        * factorial(_int(J - j1 + j2))
        * factorial(_int(j1 + j2 - J)),
        factorial(_int(j1 + j2 + J + 1)),
    )
    pre *= (
        factorial(_int(J + M)) * factorial(_int(J - M))
        * factorial(_int(j1 - m1)) * factorial(_int(j1 + m1))
        * factorial(_int(j2 - m2)) * factorial(_int(j2 + m2))
    )
    s = Fraction(0)
    k = 0
    while True:
        args = (
            j1 + j2 - J - k, j1 - m1 - k, j2 + m2 - k,
            J - j2 + m1 + k, J - j1 - m2 + k,
        )
        if args[0] < 0 or args[1] < 0 or args[2] < 0:
            break
        if args[3] >= 0 and args[4] >= 0:
            den = factorial(k)
            for a in args:
                den *= factorial(_int(a))
            s += Fraction((-1) ** k, den)
        k += 1
    if s == 0:
        return 0, Fraction(0)
    return (1 if s > 0 else -1), pre * s * s


def clebsch_gordan_squared(j1, m1, j2, m2, J, M) -> Fraction:
    """Exact value of ``|<j1 m1; j2 m2 | J M>|^2`` (Condon-Shortley)."""
    return _cg_parts(*(_frac(x) for x in (j1, m1, j2, m2, J, M)))[1]


def clebsch_gordan(j1, m1, j2, m2, J, M) -> float:
    sign, sq = _cg_parts(*(_frac(x) for x in (j1, m1, j2, m2, J, M)))
    return sign * float(sq) ** 0.5


def _triangle_sq(a, b, c) -> Fraction:
    return Fraction(
        factorial(_int(a + b - c)) * factorial(_int(a - b + c))
        * factorial(_int(-a + b + c)),
        factorial(_int(a + b + c + 1)),
    )


def _triad_ok(a, b, c) -> bool:
    return abs(a - b) <= c <= a + b and (a + b + c).denominator == 1


@lru_cache(maxsize=None)
def _wigner_6j_sq(a, b, c, d, e, f) -> Fraction:
    if not (_triad_ok(a, b, c) and _triad_ok(a, e, f)
            and _triad_ok(d, b, f) and _triad_ok(d, e, c)):
        return Fraction(0)
    pre = (_triangle_sq(a, b, c) * _triangle_sq(a, e, f)
           * _triangle_sq(d, b, f) * _triangle_sq(d, e, c))
    lo = max(a + b + c, a + e + f, d + b + f, d + e + c)
    hi = min(a + b + d + e, b + c + e + f, c + a + f + d)
    s = Fraction(0)
    t = lo
    while t <= hi:
        den = (
            factorial(_int(t - a - b - c)) * factorial(_int(t - a - e - f))
            * factorial(_int(t - d - b - f)) * factorial(_int(t - d - e - c))
            * factorial(_int(a + b + d + e - t)) * factorial(_int(b + c + e + f - t))
            * factorial(_int(c + a + f + d - t))
        )
        s += Fraction((-1) ** _int(t) * factorial(_int(t + 1)), den)
        t += 1
    return pre * s * s


def wigner_6j_squared(a, b, c, d, e, f) -> Fraction:
    return _wigner_6j_sq(*(_frac(x) for x in (a, b, c, d, e, f)))


@dataclass(frozen=True)
class HyperfineLevel:
    manifold: str
    F: int
    mF: int

    def __post_init__(self):
        allowed = {"ground": (1, 2), "excited": (0, 1, 2, 3)}
        if self.manifold not in allowed:
            raise ValueError(f"manifold must be 'ground' or 'excited', got {self.manifold!r}")
        if self.F not in allowed[self.manifold]:
            raise ValueError(f"F={self.F} not in the {self.manifold} D2 manifold")
        if abs(self.mF) > self.F:
            raise ValueError(f"|mF|={abs(self.mF)} exceeds F={self.F}")

    @property
    def energy_offset(self) -> float:
        table = GROUND_HYPERFINE_MHZ if self.manifold == "ground" else EXCITED_HYPERFINE_MHZ
        return table[self.F]

    def __str__(self):
        prime = "'" if self.manifold == "excited" else ""
        return f"|F{prime}={self.F}, mF={self.mF}>"


def ground_levels() -> list[HyperfineLevel]:
    return [HyperfineLevel("ground", F, m) for F in (1, 2) for m in range(-F, F + 1)]


def excited_levels() -> list[HyperfineLevel]:
    return [HyperfineLevel("excited", F, m) for F in (0, 1, 2, 3) for m in range(-F, F + 1)]


QUBIT_0 = HyperfineLevel("ground", 1, 0)
QUBIT_1 = HyperfineLevel("ground", 2, 0)
ERROR_STATES = frozenset({HyperfineLevel("ground", 1, -1), HyperfineLevel("ground", 1, 1)})
EXCITED_E = HyperfineLevel("excited", 1, 0)
EXCITED_E3 = HyperfineLevel("excited", 3, 0)


def _exact_fractions(excited: HyperfineLevel) -> dict[HyperfineLevel, Fraction]:
    if excited.manifold != "excited":
        raise ValueError(f"{excited} is not an excited D2 level")
    out = {}
    for g in ground_levels():
        q = excited.mF - g.mF
        if abs(q) > 1:
            continue
        w = (
            (2 * J_EXCITED + 1) * (2 * g.F + 1)
            * wigner_6j_squared(J_GROUND, J_EXCITED, 1, excited.F, g.F, NUCLEAR_SPIN)
            * clebsch_gordan_squared(g.F, g.mF, 1, q, excited.F, excited.mF)
        )
        if w:
            out[g] = Fraction(w)
    return out


def branching_fractions(excited: HyperfineLevel) -> dict[HyperfineLevel, float]:
    """Decay fractions from an excited D2 level into each ground sublevel.

    Ground levels with a vanishing matrix element are omitted. The fractions
    sum to one exactly (before float conversion).
    """
    return {g: float(w) for g, w in _exact_fractions(excited).items()}


@dataclass(frozen=True)
class BranchingTable:
    """Branching fractions for every excited level.

    ``rows[e][(g, q)]`` is the fraction of decays from ``e`` into ground level
    ``g`` emitting a photon of polarization ``q = mF(e) - mF(g)``.
    """

    rows: Mapping[HyperfineLevel, Mapping[tuple[HyperfineLevel, int], float]]

    def fraction(self, excited: HyperfineLevel, ground: HyperfineLevel) -> float:
        return sum(v for (g, _), v in self.rows[excited].items() if g == ground)


@lru_cache(maxsize=1)
def branching_table() -> BranchingTable:
    rows = {}
    for e in excited_levels():
        rows[e] = {(g, e.mF - g.mF): v for g, v in branching_fractions(e).items()}
    return BranchingTable(rows)


def detectability_split(
    excited: HyperfineLevel,
    detectable_set: Iterable[HyperfineLevel],
    recycled: Iterable[HyperfineLevel] = (),
) -> tuple[float, float]:
    """Split decays into (detectable, undetectable) fractions.

    ``recycled`` ground levels are returned to the driven state and pumped
    again; their weight is merged into the detectable share so the two
    fractions still sum to one.
    """
    detectable = set(detectable_set) | set(recycled)
    fr = _exact_fractions(excited)
    d = sum((w for g, w in fr.items() if g in detectable), Fraction(0))
    return float(d), float(1 - d)


def dark_state_detectability(
    excited: HyperfineLevel = EXCITED_E,
    detectable_set: Iterable[HyperfineLevel] = ERROR_STATES,
    weight_a: float = 0.5,
) -> float:
    """Detectable fraction of dark-state decays.

    Decay through atom B leaves atom A in an error state and is always
    detected; decay through atom A (probability ``weight_a``) follows the
    single-atom branching.
    """
    d_a, _ = detectability_split(excited, detectable_set)
    return (1.0 - weight_a) + weight_a * d_a


@dataclass(frozen=True)
class Rb87Branching:
    """Detectable / undetectable decay fractions for the two excited states.

    Values are fractions of the natural linewidth: ``d + nd == 1`` and
    ``d3 + nd3 == 1``.
    """

    d: float
    nd: float
    d3: float
    nd3: float
    detectable: frozenset = field(default=ERROR_STATES, compare=False)


def rb87_branching(
    detectable_set: Iterable[HyperfineLevel] = ERROR_STATES,
    recycled: Iterable[HyperfineLevel] = (QUBIT_1,),
) -> Rb87Branching:
    """Aggregated branching used by the two-atom model.

    By default decays back into the driven qubit level ``|F=2, mF=0>`` are
    treated as recycled (the drive pumps them again), while decays into the
    other F=2 Zeeman sublevels are undetectable. Pass ``recycled=()`` for the
    stricter convention where every F=2 sublevel counts as undetectable.
    """
    detectable_set = frozenset(detectable_set)
    d, nd = detectability_split(EXCITED_E, detectable_set, recycled)
    d3, nd3 = detectability_split(EXCITED_E3, detectable_set, recycled)
    return Rb87Branching(d, nd, d3, nd3, detectable_set)


def dipole_ratio_squared(ground: HyperfineLevel, upper: HyperfineLevel,
                         lower: HyperfineLevel) -> float:
    """``|<g|d_q|upper>|^2 / |<g|d_q|lower>|^2`` for absorption from ``ground``.

    Both excited levels must share ``mF``; the polarization is fixed by it.
    """

    def strength(e: HyperfineLevel) -> Fraction:
        q = e.mF - ground.mF
        return (
            (2 * e.F + 1) * (2 * J_GROUND + 1)
            * wigner_6j_squared(J_GROUND, J_EXCITED, 1, e.F, ground.F, NUCLEAR_SPIN)
            * clebsch_gordan_squared(ground.F, ground.mF, 1, q, e.F, e.mF)
        )

    den = strength(lower)
    if den == 0:
        raise ZeroDivisionError(f"transition {ground} -> {lower} is forbidden")
    return float(strength(upper) / den)
