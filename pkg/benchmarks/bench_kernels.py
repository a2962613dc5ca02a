"""Time the numpy and compiled per-interaction kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--words W]

Reports microseconds per forward and per train step for a few (d, b) sizes,
and the largest disagreement between the two backends' outputs.
"""

import argparse
import time

import numpy as np

from drex.kernels import KERNEL_PARAMS, CythonKernel, PythonKernel
from drex.model import HyperParams, init_params

SIZES = ((8, 32), (16, 64), (64, 300), (64, 768))


def setup(d, b, words, seed=0):
    params = init_params(HyperParams(d=d, b=b), seed)
    params = {k: np.ascontiguousarray(params[k]) for k in KERNEL_PARAMS}
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(words, b))
    u, i = rng.normal(size=d) * 0.3, rng.normal(size=d) * 0.3
    return params, E, u, i


def per_call(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best * 1e6


def bench(d, b, words, repeat):
    params, E, u, i = setup(d, b, words)
    row = {"d": d, "b": b}
    outs = {}
    for name, cls in (("python", PythonKernel), ("cython", CythonKernel)):
        if cls is None:
            continue
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        k = cls(params, grads)
        row[f"{name}_fwd"] = per_call(lambda: k.forward(E, 4, u, i), repeat)
        row[f"{name}_step"] = per_call(lambda: k.train_step(E, 4, u, i, 4.0, 1e-3, 1.0, True, True), repeat)
        for g in grads.values():
            g[:] = 0.0
        out = k.train_step(E, 4, u, i, 4.0, 1e-3, 1.0, True, True)
        outs[name] = (np.array([out[0], out[1]]), out[2], out[3], out[5], out[6], out[7],
                      *[grads[n].copy() for n in KERNEL_PARAMS])
    if len(outs) == 2:
        row["max_abs_diff"] = max(float(np.max(np.abs(a - b))) for a, b in zip(outs["python"], outs["cython"]))
    return row


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--words", type=int, default=40, help="tokens per review")
    args = ap.parse_args()
    if CythonKernel is None:
        print("compiled kernel not built; timing the numpy kernel only")
    print(f"{'d':>4} {'b':>5} {'py fwd':>9} {'py step':>9} {'cy fwd':>9} {'cy step':>9} {'speedup':>8} {'max diff':>10}")
    for d, b in SIZES:
        r = bench(d, b, args.words, args.repeat)
        cy_f, cy_s = r.get("cython_fwd", float("nan")), r.get("cython_step", float("nan"))
        print(f"{d:>4} {b:>5} {r['python_fwd']:>9.1f} {r['python_step']:>9.1f} {cy_f:>9.1f} {cy_s:>9.1f} "
              f"{r['python_step'] / cy_s:>7.1f}x {r.get('max_abs_diff', float('nan')):>10.2e}")
    print("times in microseconds per call")


if __name__ == "__main__":
    main()
