"""Photon-counting readout statistics.

Covers the detector dead-time model, Poisson two-hypothesis thresholding,
exact binomial confidence intervals, Monte-Carlo window counts and the
classification of sequential readout patterns.

A window is labelled ``"H"`` when its count exceeds the threshold ``k_T``
and ``"L"`` otherwise. An atom in the coupled manifold blocks the cavity
transmission, so coupled means low counts (mean ``mu_L``) and uncoupled
means high counts (mean ``mu_H``).
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "DetectorModel",
    "ThresholdModel",
    "ReadoutRecord",
    "dead_time_rate",
    "dead_time_peak",
    "optimal_threshold",
    "readout_error_probs",
    "readout_fidelity",
    "clopper_pearson",
    "simulate_readout",
    "simulate_sequence",
    "sequence_patterns",
    "decision_table",
    "classify_sequence",
    "read_time_tags",
    "bin_time_tags",
    "readout_report",
    "SINGLE_ATOM_STATES",
    "TWO_ATOM_STATES",
]


@dataclass(frozen=True)
class DetectorModel:
    """Single-photon detector chain.

    ``t_dead_ns`` is the dead time per detector, ``dark_rate`` the dark
    count rate in counts/s, ``window_us`` the integration window and
    ``n_detectors`` the number of detectors sharing the signal.
    """

    t_dead_ns: float = 17.0
    dark_rate: float = 0.0
    window_us: float = 1.0
    n_detectors: int = 2

    def __post_init__(self):
        for k in ("t_dead_ns", "dark_rate", "window_us"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{k} must be finite and >= 0, got {v}")
        if int(self.n_detectors) != self.n_detectors or self.n_detectors < 1:
            raise ValueError(f"n_detectors must be a positive integer, got {self.n_detectors}")

    @property
    def effective_dead_time_s(self) -> float:
        return self.t_dead_ns * 1e-9 / self.n_detectors


@dataclass(frozen=True)
class ThresholdModel:
    """Low and high Poisson means per window and the count threshold."""

    mu_low: float
    mu_high: float
    k_threshold: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.mu_low) and math.isfinite(self.mu_high)):
            raise ValueError("means must be finite")
        if not 0 < self.mu_low < self.mu_high:
            raise ValueError(f"need 0 < mu_low < mu_high, got {self.mu_low}, {self.mu_high}")
        if self.k_threshold is None:
            object.__setattr__(self, "k_threshold", optimal_threshold(self.mu_low, self.mu_high))
        if int(self.k_threshold) != self.k_threshold or self.k_threshold < 0:
            raise ValueError(f"k_threshold must be a non-negative integer, got {self.k_threshold}")
        object.__setattr__(self, "k_threshold", int(self.k_threshold))

    def label(self, counts) -> np.ndarray:
        return np.where(np.asarray(counts) > self.k_threshold, "H", "L")


@dataclass(frozen=True, eq=False)
class ReadoutRecord:
    """Ordered window counts with their H/L labels.

    ``sequence_kind`` is ``"single-atom"`` (2 windows), ``"two-atom"``
    (3 windows) or ``"raw"`` (any number of independent windows).
    """

    counts: np.ndarray
    labels: tuple[str, ...]
    sequence_kind: str
    k_threshold: int

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64).ravel()
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        labels = tuple(self.labels)
        if len(labels) != c.size:
            raise ValueError("one label per window required")
        expect = np.where(c > self.k_threshold, "H", "L")
        if tuple(expect.tolist()) != labels:
            raise ValueError("labels inconsistent with k_threshold")
        n = {"single-atom": 2, "two-atom": 3}.get(self.sequence_kind)
        if self.sequence_kind not in ("single-atom", "two-atom", "raw"):
            raise ValueError(f"unknown sequence_kind {self.sequence_kind!r}")
        if n is not None and c.size != n:
            raise ValueError(f"{self.sequence_kind} record needs {n} windows, got {c.size}")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_counts(cls, counts, m: ThresholdModel, sequence_kind: str = "raw") -> "ReadoutRecord":
        counts = np.asarray(counts, dtype=np.int64).ravel()
        return cls(counts, tuple(m.label(counts).tolist()), sequence_kind, m.k_threshold)

    @property
    def pattern(self) -> str:
        return "".join(self.labels)

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.tolist(),
            "labels": list(self.labels),
            "sequence_kind": self.sequence_kind,
            "k_threshold": self.k_threshold,
        }


# ----------------------------------------------------------------------------
# detector


def dead_time_rate(c_p, d: DetectorModel, printed_form: bool = False):
    """Measured count rate for an incident rate ``c_p`` (counts/s).

    Default: ``C_M = R exp(-t_eff R)`` with ``R = c_p + dark_rate`` and the
    per-detector dead time shared among ``n_detectors``. With
    ``printed_form=True`` the exponent is ``t_D R tau_0`` with ``t_D`` and
    ``tau_0`` both in seconds and no detector sharing; this literal form is
    kept only for comparison.
    """
    c_p = np.asarray(c_p, dtype=float)
    if np.any(c_p < 0):
        raise ValueError("incident rate must be >= 0")
    r = c_p + d.dark_rate
    if printed_form:
        return r * np.exp(-d.t_dead_ns * 1e-9 * r * d.window_us * 1e-6)
    return r * np.exp(-d.effective_dead_time_s * r)


def dead_time_peak(d: DetectorModel) -> float:
    """Incident rate at which the measured rate is maximal."""
    if d.t_dead_ns == 0:
        return math.inf
    return 1.0 / d.effective_dead_time_s - d.dark_rate


# ----------------------------------------------------------------------------
# thresholding


def optimal_threshold(mu_low: float, mu_high: float) -> int:
    """Count threshold where the two Poisson likelihoods cross.

    ``k_T = floor((mu_H - mu_L) / ln(mu_H / mu_L))``.
    """
    if not (math.isfinite(mu_low) and math.isfinite(mu_high)) or not 0 < mu_low < mu_high:
        raise ValueError(f"need 0 < mu_low < mu_high, got {mu_low}, {mu_high}")
    return int(math.floor((mu_high - mu_low) / (math.log(mu_high) - math.log(mu_low))))


def readout_error_probs(m: ThresholdModel) -> tuple[float, float]:
    """False-positive and false-negative probabilities.

    ``P_FP = P(k > k_T | mu_L)`` and ``P_FN = P(k <= k_T | mu_H)``.
    """
    p_fp = float(stats.poisson.sf(m.k_threshold, m.mu_low))
    p_fn = float(stats.poisson.cdf(m.k_threshold, m.mu_high))
    return p_fp, p_fn


def readout_fidelity(m: ThresholdModel) -> float:
    p_fp, p_fn = readout_error_probs(m)
    return 1.0 - 0.5 * (p_fp + p_fn)


def clopper_pearson(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval from beta quantiles."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("need 0 <= successes <= trials")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    a = 1.0 - confidence
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(a / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(stats.beta.ppf(1 - a / 2, successes + 1, trials - successes))
    return lo, hi


# ----------------------------------------------------------------------------
# Monte-Carlo


def _poisson_chunk(seed: int, stream: int, mean: float, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))
    return rng.poisson(mean, n)


def simulate_readout(
    true_state: str,
    m: ThresholdModel,
    windows: int,
    rng_seed: int,
    chunk: int = 1 << 18,
    workers: int | None = None,
) -> ReadoutRecord:
    """Independent Poisson windows for a ``"coupled"`` or ``"uncoupled"`` atom.

    The windows are drawn in fixed-size chunks, each with its own stream
    ``(rng_seed, chunk_index)``, so the record does not depend on
    ``workers``.
    """
    if true_state not in ("coupled", "uncoupled"):
        raise ValueError(f"true_state must be 'coupled' or 'uncoupled', got {true_state!r}")
    if windows < 0:
        raise ValueError("windows must be >= 0")
    mean = m.mu_low if true_state == "coupled" else m.mu_high
    sizes = [min(chunk, windows - i) for i in range(0, windows, chunk)]
    jobs = [(rng_seed, k, mean, n) for k, n in enumerate(sizes)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda a: _poisson_chunk(*a), jobs))
    else:
        parts = [_poisson_chunk(*a) for a in jobs]
    counts = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return ReadoutRecord.from_counts(counts, m, "raw")


# ----------------------------------------------------------------------------
# sequential readout state machine
#
# Single-atom states: "0" (F=1, mF=0), "1" (F=2, mF=0), "err" (F=1, mF=+-1).
# Readout pumps "1" into the stretched coupled state "s" and leaves the F=1
# states alone. The microwave pi pulse swaps "0" and "1" only.

SINGLE_ATOM_STATES = ("0", "1", "err")
TWO_ATOM_STATES = tuple(a + b for a, b in itertools.product(("0", "1", "err"), repeat=2))
_COUPLED = {"1", "s"}


def _readout(states: Sequence[str]) -> tuple[str, list[str]]:
    """One readout of the non-hidden atoms: label and post-readout states."""
    blocked = any(s in _COUPLED for s in states if s != "hidden")
    return ("L" if blocked else "H"), ["s" if s == "1" else s for s in states]


def _pi(states: Sequence[str]) -> list[str]:
    swap = {"0": "1", "1": "0"}
    return [swap.get(s, s) for s in states]


def sequence_patterns(state: str) -> tuple[str, str]:
    """Noise-free readout pattern and sequence kind for a prepared state.

    Single atom: readout, pi pulse, readout. Two atoms: joint readout, hide
    atom B in the uncoupled manifold, then the single-atom sequence on A.
    """
    if state in SINGLE_ATOM_STATES:
        st = [state]
        l1, st = _readout(st)
        l2, _ = _readout(_pi(st))
        return l1 + l2, "single-atom"
    for a, b in itertools.product(SINGLE_ATOM_STATES, repeat=2):
        if a + b == state:
            st = [a, b]
            l1, st = _readout(st)
            st = [st[0], "hidden"]
            l2, st = _readout(st)
            l3, _ = _readout(_pi(st))
            return l1 + l2 + l3, "two-atom"
    raise ValueError(f"unknown state {state!r}")


def _group_name(group: set[str]) -> str:
    if all(s.startswith("err") and len(s) > 3 for s in group):
        return "errA"
    if len(group) == 1:
        return next(iter(group))
    if group == {"00", "0err"}:
        return "00"
    if all(s.startswith("1") for s in group):
        return "1x"
    raise ValueError(f"no label for indistinguishable states {sorted(group)}")


def decision_table(sequence_kind: str) -> dict[str, str]:
    """Pattern to label map generated from the readout state machine.

    Patterns reachable from no prepared state map to ``"inconsistent"``.
    Preparations that give the same pattern are grouped: ``"00"`` also
    contains an error on atom B, ``"1x"`` is atom A in ``1`` with any B and
    ``"errA"`` is an error on atom A (with B in ``0``/``err`` or in ``1``,
    which give different patterns).
    """
    states = {"single-atom": SINGLE_ATOM_STATES, "two-atom": TWO_ATOM_STATES}[sequence_kind]
    n = 2 if sequence_kind == "single-atom" else 3
    groups: dict[str, set[str]] = {}
    for s in states:
        pat, _ = sequence_patterns(s)
        groups.setdefault(pat, set()).add(s)
    table = {}
    for pat in ("".join(p) for p in itertools.product("HL", repeat=n)):
        g = groups.get(pat)
        table[pat] = "inconsistent" if g is None else _group_name(g)
    return table


def classify_sequence(r: ReadoutRecord) -> str:
    """State label for a sequential readout record."""
    if r.sequence_kind == "raw":
        raise ValueError("raw records carry no sequence")
    return decision_table(r.sequence_kind)[r.pattern]


def simulate_sequence(state: str, m: ThresholdModel, rng_seed: int | None = None,
                      noise_free: bool = False) -> ReadoutRecord:
    """Readout record for a prepared state.

    Each window draws from ``mu_L`` (blocked) or ``mu_H`` (transmitting).
    With ``noise_free`` the counts are ``0`` and ``k_T + 1`` so the labels
    are exact.
    """
    pat, kind = sequence_patterns(state)
    if noise_free:
        counts = [m.k_threshold + 1 if c == "H" else 0 for c in pat]
    else:
        rng = np.random.default_rng(rng_seed)
        counts = [rng.poisson(m.mu_high if c == "H" else m.mu_low) for c in pat]
    return ReadoutRecord.from_counts(counts, m, kind)


# ----------------------------------------------------------------------------
# time tags


def read_time_tags(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``timestamp_ns, detector_id`` rows (CSV or whitespace separated).

    Lines starting with ``#`` and a non-numeric header line are skipped.
    """
    ts, ids = [], []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = next(csv.reader([line])) if "," in line else line.split()
            try:
                t, d = float(parts[0]), int(parts[1])
            except (ValueError, IndexError):
                if not ts and lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: cannot parse {line!r}")
            ts.append(t)
            ids.append(d)
    return np.asarray(ts, dtype=float), np.asarray(ids, dtype=np.int64)


def bin_time_tags(timestamps_ns, window_us: float, start_ns: float = 0.0,
                  n_windows: int | None = None) -> np.ndarray:
    """Counts per consecutive window of length ``window_us`` from ``start_ns``."""
    if window_us <= 0:
        raise ValueError("window_us must be positive")
    t = np.asarray(timestamps_ns, dtype=float) - start_ns
    t = t[t >= 0]
    w = window_us * 1e3
    if n_windows is None:
        n_windows = int(np.floor(t.max() / w)) + 1 if t.size else 0
    idx = np.floor(t / w).astype(np.int64)
    idx = idx[idx < n_windows]
    return np.bincount(idx, minlength=n_windows).astype(np.int64)


def readout_report(m: ThresholdModel, d: DetectorModel | None = None,
                   records: Mapping[str, ReadoutRecord] | None = None,
                   confidence: float = 0.95) -> dict:
    """JSON-ready summary echoing every model parameter.

    ``records`` maps ``"coupled"``/``"uncoupled"`` to raw Monte-Carlo or
    measured records; their empirical error rates come with Clopper-Pearson
    intervals.
    """
    p_fp, p_fn = readout_error_probs(m)
    out = {
        "threshold_model": asdict(m),
        "p_false_positive": p_fp,
        "p_false_negative": p_fn,
        "fidelity": 1 - 0.5 * (p_fp + p_fn),
    }
    if d is not None:
        out["detector_model"] = asdict(d)
        out["dead_time_peak_rate"] = dead_time_peak(d)
    for key, wrong in (("coupled", "H"), ("uncoupled", "L")):
        if records and key in records:
            r = records[key]
            k = sum(1 for lab in r.labels if lab == wrong)
            lo, hi = clopper_pearson(k, len(r.labels), confidence)
            out[f"empirical_{key}"] = {"windows": len(r.labels), "errors": k,
                                       "rate": k / len(r.labels), "ci": [lo, hi],
                                       "confidence": confidence}
    return out
