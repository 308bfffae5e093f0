"""Time the compiled kernel against the numpy fallback.

Run ``python benchmarks/bench_kernels.py [--repeat N]``. Each row reports the
best wall time per call for both backends and the speedup.
"""

import argparse
import math
import timeit

import numpy as np

from brakechords import _backend
from brakechords.flow import integrate_H, integrate_U
from brakechords.model import PhasePoint, scenario


def cases(model, batch: int, rng):
    Q = rng.uniform(-0.4, 0.4, size=(batch, 2))
    P = rng.normal(size=(batch, 2))
    Th = P / np.linalg.norm(P, axis=1, keepdims=True)
    k = model.kernel
    V = k.gradU(Q, P)[2]
    z = PhasePoint([0.3, -0.1], [0.2, 0.4])
    u = math.sqrt(float(k.U(z.q[None], z.p[None])[0]))
    x = PhasePoint(z.q, z.p / u)
    return {
        f"H ({batch} pts)": lambda: k.H(Q, P),
        f"omega ({batch} pts)": lambda: k.omega(Q, Th),
        f"gradU ({batch} pts)": lambda: k.gradU(Q, P),
        f"to_momentum ({batch} pts)": lambda: k.to_momentum(Q, V),
        "single-point gradU": lambda: k.gradU(Q[:1], P[:1]),
        "integrate_H, t in [0, 10]": lambda: integrate_H(model, z, (0, 10.0), tol=1e-12),
        "integrate_U, s in [0, 0.3]": lambda: integrate_U(model, x, (0, 0.3), tol=1e-12),
    }


def best(fn, repeat: int) -> float:
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--scenario", default="s3")
    parser.add_argument("--batch", type=int, default=256)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = _backend.available_backends()
    if "cython" not in backends:
        print("compiled kernel unavailable; only the numpy fallback is installed")
    table = {}
    for name in backends:
        model = scenario(args.scenario, backend=name)[0]
        for label, fn in cases(model, args.batch, np.random.default_rng(0)).items():
            table.setdefault(label, {})[name] = best(fn, args.repeat)
    print(f"scenario {args.scenario}")
    print(f"{'kernel':32s}{'python':>12s}{'cython':>12s}{'speedup':>10s}")
    for label, row in table.items():
        py, cy = row.get("python"), row.get("cython")
        speed = f"{py / cy:9.1f}x" if cy else ""
        cy_s = f"{cy * 1e6:10.1f}us" if cy else ""
        print(f"{label:32s}{py * 1e6:10.1f}us{cy_s:>12s}{speed:>10s}")


if __name__ == "__main__":
    main()
