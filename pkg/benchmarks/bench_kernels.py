#!/usr/bin/env python3
"""Throughput comparison of the compiled and pure-NumPy integrator cores.

Integrates identical trajectory batches through every available kernel
implementation and reports trajectories per second.  The pure-Python
core is the fallback used when the compiled extension cannot be built,
so the speedup column is the cost of losing it.

    python3 benchmarks/bench_kernels.py --trajectories 40 --t-max 2.0
"""

import argparse
import time

import numpy as np

from ctwa.compiler import compile_hamiltonian, contiguous_partition
from ctwa.engine import Engine, IntegrationOptions
from ctwa.kernels import available_implementations, backend_name
from ctwa.model import PRESETS
from ctwa.sampling import InitialConditions


def make_batch(compiled, backend, n, seed=0):
    ss = np.random.SeedSequence(seed).spawn(2)
    rng_init, rng_noise = (np.random.Generator(np.random.Philox(s)) for s in ss)
    sampler = InitialConditions(compiled, PRESETS["disordered_heisenberg"]().initial, backend)
    return sampler.draw(rng_init, rng_noise, n)


def bench_backend(compiled, backend, n, t_eval, rtol, impl):
    batch = make_batch(compiled, backend, n)
    engine = Engine(compiled, backend,
                    options=IntegrationOptions(rtol=rtol, atol=rtol * 1e-2, impl=impl))
    start = time.perf_counter()
    _, statuses = engine.run(batch, t_eval)
    elapsed = time.perf_counter() - start
    if np.any(statuses != 0):
        raise RuntimeError(f"{backend}/{impl}: {np.sum(statuses != 0)} trajectories failed")
    return n / elapsed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trajectories", type=int, default=20)
    ap.add_argument("--t-max", type=float, default=2.0)
    ap.add_argument("--rtol", type=float, default=1e-8)
    ap.add_argument("--cluster-sizes", type=int, nargs="+", default=[2, 4])
    args = ap.parse_args()

    impls = list(available_implementations())
    print(f"default kernel: {backend_name()}   implementations: {', '.join(impls)}")
    print(f"{args.trajectories} trajectories of the 8-site disordered Heisenberg "
          f"preset to t={args.t_max}, rtol={args.rtol:g}")
    print()

    preset = PRESETS["disordered_heisenberg"](n_sites=8)
    t_eval = np.linspace(0.0, args.t_max, 5)

    header = f"{'scenario':<24}" + "".join(f"{impl + ' traj/s':>16}" for impl in impls)
    if len(impls) > 1:
        header += f"{'speedup':>10}"
    print(header)
    for cluster in args.cluster_sizes:
        part = contiguous_partition(8, cluster, periodic=preset.model.periodic)
        compiled = compile_hamiltonian(preset.model, part)
        for backend in ("operator", "schwinger", "reduced"):
            rates = [
                bench_backend(compiled, backend, args.trajectories, t_eval, args.rtol, impl)
                for impl in impls
            ]
            row = f"{backend + f' N={cluster}':<24}" + "".join(f"{r:>16.1f}" for r in rates)
            if len(rates) > 1:
                row += f"{rates[0] / rates[-1]:>9.1f}x"
            print(row)


if __name__ == "__main__":
    main()
