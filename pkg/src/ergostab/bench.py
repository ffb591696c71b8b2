"""Benchmark the compiled kernels against the pure-Python fallback.

Run as ``python -m ergostab.bench``.  Both backends execute the same
workloads; besides timing, the results are compared to confirm the
backends agree.
"""

from __future__ import annotations

import time

import numpy as np

from ergostab import _speedups_py

try:
    from ergostab import _speedups
except ImportError:
    _speedups = None

WORKLOADS = [
    ("gd tail, 100 cells x 2064 steps", "tail"),
    ("gd lyapunov, 1e6 steps", "gd_lyap"),
    ("raw lyapunov, 1e6 steps", "raw_lyap"),
    ("gd loss series, 1e5 steps", "loss_series"),
]


def _run(impl, job):
    if job == "tail":
        out = np.empty(64)
        acc = 0.0
        for i in range(100):
            impl.gmap_gd_tail(1.0, 3.0, 0.01 + i * 0.0097, 2000, 64, 1e6, 1, out)
            acc += out[-1]
        return acc
    if job == "gd_lyap":
        v, _, _ = impl.gmap_gd_lyapunov(1.0, 3.4, 0.3333, 10**6, 1000, 1e6, 1e-300, 1)
        return v
    if job == "raw_lyap":
        v, _, _ = impl.gmap_raw_lyapunov(4.0, 0.2331, 10**6, 100, 1e6, 1e-300)
        return v
    out = np.empty(10**5)
    impl.gmap_gd_loss_series(1.0, 3.4, 0.271, 5000, 10**5, 1e6, 1, out)
    return float(out.sum())


def main():
    backends = [("python", _speedups_py)]
    if _speedups is not None:
        backends.insert(0, ("c", _speedups))
    else:
        print("compiled extension not available; timing fallback only")
    print(f"{'workload':40s} " + " ".join(f"{n:>12s}" for n, _ in backends) +
          ("      speedup" if len(backends) == 2 else ""))
    for label, job in WORKLOADS:
        times, values = [], []
        for _, impl in backends:
            t0 = time.perf_counter()
            values.append(_run(impl, job))
            times.append(time.perf_counter() - t0)
        line = f"{label:40s} " + " ".join(f"{t:11.4f}s" for t in times)
        if len(backends) == 2:
            line += f"  {times[1] / times[0]:10.1f}x"
            agreement = abs(values[0] - values[1])
            if agreement > 1e-9 * max(1.0, abs(values[0])):
                line += f"  [backends disagree by {agreement:.3e}]"
        print(line)


if __name__ == "__main__":
    main()
