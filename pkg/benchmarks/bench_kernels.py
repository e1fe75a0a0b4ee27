"""Compare the compiled RK4 propagation kernel with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--steps N] [--repeat R]
"""

import argparse
import time

import numpy as np

from cavqed import kernels
from cavqed.dynamics import _kernel_args
from cavqed.models import CavityParams, Rb87Params, build_rb87_two_atom, build_tavis_cummings


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    compiled = kernels.compiled_rk4_propagate()
    systems = {
        "tavis-cummings 1 atom, 3 photons (dim 6)":
            build_tavis_cummings(CavityParams(omega_probe=1.0), 1, 3),
        "tavis-cummings 2 atoms, 3 photons (dim 12)":
            build_tavis_cummings(CavityParams(g_b=100.0, omega_side_a=1.0, omega_side_b=1.0), 2, 3),
        "rb87 two-atom model (dim 28)": build_rb87_two_atom(Rb87Params()),
    }
    print(f"{'system':46s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speed-up':>9s} {'max diff':>9s}")
    for name, sys in systems.items():
        args_k, _ = _kernel_args(sys)
        rho0 = np.zeros((sys.dim, sys.dim), dtype=complex)
        rho0[0, 0] = 1.0
        h = 1e-4
        tp, rp = _time(lambda: kernels.python_rk4_propagate(rho0, *args_k, h, args.steps), args.repeat)
        if compiled is None:
            print(f"{name:46s} {tp * 1e3:12.1f} {'n/a':>14s}")
            continue
        tc, rc = _time(lambda: np.asarray(compiled(rho0, *args_k, h, args.steps)), args.repeat)
        print(f"{name:46s} {tp * 1e3:12.1f} {tc * 1e3:14.1f} {tp / tc:9.1f} {np.max(np.abs(rp - rc)):9.1e}")


if __name__ == "__main__":
    main()
