"""Time the compiled and pure-Python integration kernels on the same inputs.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Prints the
best-of-N wall time per call for each backend and the speed-up, and checks
that both backends agree to 1e-9 relative.
"""
import argparse
import timeit

import numpy as np

from epical import kernels
from epical.models import ModelSpec, age_facility_contact


def _cases():
    y0 = np.array([9999.0, 1.0, 0.0, 0.0, 0.0])
    yield "flat sirvd (175 days, 10 steps/day)", "flat", (0.3, 0.1, 0.02, 0.05, 10_000.0, y0, 175, 10, False)
    spec = ModelSpec.default("sir-subgroups", contact=age_facility_contact())
    args = (0.3, 0.1, spec.mixing, np.ascontiguousarray(spec.group_sizes),
            np.asarray(spec.initial_conditions), 175, 10, False)
    yield "grouped sir, 3 groups (175 days, 10 steps/day)", "grouped", args


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats (best is reported)")
    ap.add_argument("--number", type=int, default=20, help="calls per repeat")
    args = ap.parse_args(argv)
    found = kernels.backends()
    if "cython" not in found:
        print("compiled kernel not built; timing the Python fallback only")
    for label, name, call_args in _cases():
        times, outs = {}, {}
        for backend, mod in found.items():
            fn = getattr(mod, name)
            outs[backend] = fn(*call_args)[0]
            t = min(timeit.repeat(lambda: fn(*call_args), repeat=args.repeat, number=args.number))
            times[backend] = t / args.number
        line = ", ".join(f"{b} {t * 1e3:.3f} ms" for b, t in times.items())
        if len(times) == 2:
            ok = np.allclose(outs["cython"], outs["python"], rtol=1e-9, atol=1e-9)
            line += f", speed-up x{times['python'] / times['cython']:.1f}, agree={ok}"
        print(f"{label}: {line}")


if __name__ == "__main__":
    main()
