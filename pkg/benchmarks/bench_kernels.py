"""Compare the compiled and pure-numpy backends.

    python benchmarks/bench_kernels.py [--n 7] [--calls 2000] [--scenario reference]

The plant kernel is timed in-process for both paths; the end-to-end scenario
time is measured in two subprocesses, one with SEMSIM_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from semsim import kernels
from semsim.plant import default_network


def _args(n):
    net = default_network(n)
    state = np.zeros((8, n))
    state[1] = 314.15
    state[2] = 311.127
    params = np.tile(np.array([[9.4e-5], [1.3e-3], [314.15], [311.127], [31.41], [0.01]]), (1, n))
    return (state, params, np.zeros(n), np.zeros(n), net.susceptances, net.s_base, net.q_coef,
            net.load_p, net.load_q, 1e-4, 10, np.zeros((2, n)), np.zeros((2, n, 1)), np.ones(1), 10,
            np.zeros((2, n)), np.zeros(2, dtype=np.int64))


def time_kernel(fn, n, calls):
    a = _args(n)
    fn(*a)  # warm-up / compile
    t0 = time.perf_counter()
    for _ in range(calls):
        fn(*a)
    return (time.perf_counter() - t0) / calls


def time_scenario(name, disable):
    env = dict(os.environ)
    env.pop("SEMSIM_DISABLE_NUMBA", None)
    if disable:
        env["SEMSIM_DISABLE_NUMBA"] = "1"
    code = ("import time; from semsim import scenario, sim, kernels;"
            f"s = scenario.load(scenario.bundled_path({name!r})); sim.run(s);"
            "t0 = time.perf_counter(); sim.run(s); print(kernels.backend_name(), time.perf_counter() - t0)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, secs = out.stdout.split()
    return backend, float(secs)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=7)
    p.add_argument("--calls", type=int, default=2000)
    p.add_argument("--scenario", default="reference")
    args = p.parse_args(argv)

    print(f"plant kernel, n={args.n}, 10 substeps per call")
    ref = time_kernel(kernels.plant_advance_reference, args.n, args.calls)
    print(f"  numpy    {ref * 1e6:9.1f} us/call")
    if kernels.USING_NUMBA:
        fast = time_kernel(kernels.plant_advance_loop, args.n, args.calls)
        print(f"  numba    {fast * 1e6:9.1f} us/call   ({ref / fast:.1f}x)")
    else:
        print("  numba    unavailable (not installed or disabled)")

    print(f"scenario {args.scenario!r}, end to end")
    for disable in (False, True):
        backend, secs = time_scenario(args.scenario, disable)
        print(f"  {backend:8s} {secs:9.2f} s")


if __name__ == "__main__":
    main()
