"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--n N]

Times each kernel on a synthetic interval series, then a full ``detect``
and ``baseline_detect`` pass over a default noise trace with each backend
swapped in.
"""

import argparse
import time

import numpy as np

from tcforensics import _fallback, kernels
from tcforensics.baselines import baseline_detect
from tcforensics.channels import NoiseSpec, simulate_noise
from tcforensics.detector import detect

KERNELS = ("interarrival", "group_starts", "ols_slope", "epsilon_fraction", "window_sigmas",
           "regularity")


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_calls(mod, ts, ia, sorted_ia):
    return {
        "interarrival": lambda: mod.interarrival(ts),
        "group_starts": lambda: mod.group_starts(sorted_ia, 0.1),
        "ols_slope": lambda: mod.ols_slope(sorted_ia),
        "epsilon_fraction": lambda: mod.epsilon_fraction(sorted_ia, 0.1),
        "window_sigmas": lambda: mod.window_sigmas(ia, 100),
        "regularity": lambda: mod.regularity(ia, 100, 10.0),
    }


def use_backend(mod):
    for name in KERNELS:
        setattr(kernels, name, getattr(mod, name))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=100_000, help="events in the synthetic series")
    args = ap.parse_args(argv)

    try:
        from tcforensics import _kernels as compiled
    except ImportError:
        compiled = None
        print("compiled extension not built; only the fallback is timed")

    rng = np.random.default_rng(0)
    ts = np.cumsum(rng.choice([300_000, 500_000], size=args.n)).astype(np.int64)
    ia, _ = _fallback.interarrival(ts)
    sorted_ia = np.sort(ia)

    backends = [("python", _fallback)] + ([("cython", compiled)] if compiled else [])
    rows = {}
    for label, mod in backends:
        for name, call in kernel_calls(mod, ts, ia, sorted_ia).items():
            rows.setdefault(name, {})[label] = best_of(call, args.repeat)

    trace = simulate_noise(NoiseSpec(), 1)
    original = {name: getattr(kernels, name) for name in KERNELS}
    try:
        for label, mod in backends:
            use_backend(mod)
            rows.setdefault("detect (noise trace)", {})[label] = best_of(lambda: detect(trace), 1)
            rows.setdefault("baseline_detect", {})[label] = best_of(lambda: baseline_detect(trace), 1)
    finally:
        for name, fn in original.items():
            setattr(kernels, name, fn)

    print(f"series of {args.n} events, noise trace of {len(trace)} records, best of {args.repeat}")
    print(f"{'kernel':<22} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, t in rows.items():
        py = t["python"] * 1e3
        cy = t.get("cython")
        if cy is None:
            print(f"{name:<22} {py:>10.2f} {'-':>10} {'-':>8}")
        else:
            print(f"{name:<22} {py:>10.2f} {cy * 1e3:>10.2f} {t['python'] / cy:>7.1f}x")


if __name__ == "__main__":
    main()
