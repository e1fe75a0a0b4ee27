import numpy as np

from cavqed.models import CavityParams
from cavqed.spectra import Spectrum, probe_transmission_analytic


def synthetic_probe_set(g=100.0, kappa=65.0, noise=0.0, rng=None, n_points=241, span=300.0):
    """Empty, one-atom and two-atom probe traces with multiplicative noise."""
    d = np.linspace(-span, span, n_points)
    p = CavityParams(g_a=g, g_b=g, kappa=kappa)
    out, sig = [], []
    for n in (0, 1, 2):
        s = probe_transmission_analytic(p, d, n_atoms=n)
        y = s.signal
        if noise:
            y = y * (1 + noise * rng.standard_normal(d.size))
        out.append(Spectrum(d, np.clip(y, 0, None), n_atoms=n))
        sig.append(noise * s.signal if noise else None)
    return out, (sig if noise else None)


_ACCEPTANCE_LINES: list[str] = []


def acceptance_line(n: int, ok: bool, detail: str) -> str:
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
