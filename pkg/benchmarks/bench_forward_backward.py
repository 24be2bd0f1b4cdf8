"""Time the numba and numpy kernels for forward-backward and path enumeration.

    python3 benchmarks/bench_forward_backward.py [--repeat 5]

The first numba call compiles (or loads from cache) and is reported separately.
"""

import argparse
import time

import numpy as np

from imprecise_em import _accel
from imprecise_em.automaton import LabelNFA, brute_force_posterior, forward_backward, trellis


def random_nfa(rng, N, C):
    allowed = rng.random((N, C)) < 0.6
    allowed[np.arange(N), rng.integers(0, C, N)] = True
    return LabelNFA(allowed, rng.dirichlet(np.ones(C), size=N), rng.random((N, C)) + 0.05)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {_accel.USE_NUMBA}")
    cases = []
    for N in (1_000, 100_000):
        nfa = random_nfa(rng, N, 10)
        # trellis is the alpha/beta recursion alone; forward_backward adds per-position targets
        cases += [("trellis", trellis, nfa, f"N={N}, C=10"),
                  ("forward_backward", forward_backward, nfa, f"N={N}, C=10")]
    cases += [("brute_force", brute_force_posterior, random_nfa(rng, 6, 10), "N=6, C=10")]
    print(f"{'kernel':<18}{'size':<16}{'numpy (s)':>12}{'numba (s)':>12}{'speedup':>10}")
    for name, fn, nfa, size in cases:
        t0 = time.perf_counter()
        fn(nfa, use_numba=True)
        warm = time.perf_counter() - t0
        t_np = best_of(lambda: fn(nfa, use_numba=False), args.repeat)
        t_nb = best_of(lambda: fn(nfa, use_numba=True), args.repeat)
        print(f"{name:<18}{size:<16}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x"
              f"   (first numba call {warm:.2f}s)")


if __name__ == "__main__":
    main()
