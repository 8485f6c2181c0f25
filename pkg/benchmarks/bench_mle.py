"""Compare the pure-Python and compiled likelihood kernels.

Times a single negative-log-likelihood/gradient evaluation, a full
maximum-likelihood reconstruction and a short Monte-Carlo error run on
each available backend, and checks that both give the same answer.

Usage: python3 benchmarks/bench_mle.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from qdcascade import likelihood
from qdcascade.polarization import werner
from qdcascade.tomography import _PSI_IM, _PSI_RE, mle_reconstruct, monte_carlo_errors, predicted_counts, setting_totals


def workload(seed=0):
    rng = np.random.default_rng(seed)
    counts = rng.poisson(predicted_counts(werner(0.85), np.full(36, 150.0))).astype(float)
    return counts, rng.normal(size=16)


def bench(backend, repeat):
    counts, x = workload()
    nset = setting_totals(counts)
    grad = np.empty(16)
    previous = likelihood.set_backend(backend)
    try:
        kernel = min(
            timeit.repeat(
                lambda: likelihood.nll_grad(x, counts, nset, 0.0, _PSI_RE, _PSI_IM, grad), number=2000, repeat=repeat
            )
        ) / 2000
        fit = min(timeit.repeat(lambda: mle_reconstruct(counts), number=50, repeat=repeat)) / 50
        mc = min(timeit.repeat(lambda: monte_carlo_errors(counts, 0.1, repetitions=100), number=1, repeat=repeat))
        rho = mle_reconstruct(counts)
    finally:
        likelihood.set_backend(previous)
    return kernel, fit, mc, rho


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    results = {name: bench(name, args.repeat) for name in likelihood.available_backends()}
    print(f"{'backend':<10} {'nll+grad [us]':>14} {'MLE fit [ms]':>13} {'100-rep MC [s]':>15}")
    for name, (kernel, fit, mc, _) in results.items():
        print(f"{name:<10} {kernel * 1e6:>14.2f} {fit * 1e3:>13.3f} {mc:>15.3f}")
    if len(results) == 2:
        py, ext = results["python"], results["compiled"]
        print(f"speed-up: kernel x{py[0] / ext[0]:.1f}, fit x{py[1] / ext[1]:.1f}, MC x{py[2] / ext[2]:.1f}")
        print(f"max |rho_python - rho_compiled| = {np.max(np.abs(py[3] - ext[3])):.2e}")
    else:
        print("compiled extension not built; only the Python backend was timed")


if __name__ == "__main__":
    main()
