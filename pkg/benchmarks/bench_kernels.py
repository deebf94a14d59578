"""Compare the numpy fallback kernels with the compiled extension.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--epochs N]

Per-kernel timings use inputs shaped like a two-moons training step; the
end-to-end row trains a short run under each backend in a subprocess,
since the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from spfilter import _pykernels

try:
    from spfilter import _kernels
except ImportError:
    _kernels = None

END_TO_END = """
import time
from spfilter.data import make_two_moons, split_labeled
from spfilter.trainer import TrainConfig, run_training
x, y = make_two_moons(1000, 0.1, 0)
ds, truth = split_labeled(x, y, 5, 0)
t = time.perf_counter()
run_training(TrainConfig(epochs={epochs}, seed=0), ds, truth)
print(time.perf_counter() - t)
"""


def kernel_cases(rng):
    sizes = (2, 64, 64, 2)
    params = []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        params += [rng.normal(size=(fi, fo)) * 0.3, rng.normal(size=fo) * 0.1]
    x = rng.normal(size=(16, 2))
    scores = rng.uniform(0.5, 1.0, size=800)
    logp1, logp2 = rng.normal(size=800), rng.normal(size=800)
    W = rng.dirichlet([1.0, 1.0], size=800)
    flags = rng.uniform(size=800) < 0.7

    def cases(k):
        probs, acts = k.mlp_forward(params, x)
        dlogits = probs - np.eye(2)[rng.integers(0, 2, 16)]
        grads = k.mlp_backward(params, acts, dlogits)
        p = [q.copy() for q in params]
        bufs = [np.zeros_like(q) for q in params]
        return {
            "beta_logpdf (800)": lambda: k.beta_logpdf(scores, 2.0, 8.0),
            "responsibilities (800)": lambda: k.responsibilities(logp1, logp2, 0.4, 0.6),
            "weighted_moments (800)": lambda: k.weighted_moments(scores, W),
            "midrank_auroc (800)": lambda: k.midrank_auroc(scores, flags),
            "mlp_forward (16x2-64-64-2)": lambda: k.mlp_forward(params, x),
            "mlp_backward (16 rows)": lambda: k.mlp_backward(params, acts, dlogits),
            "sgd_update (4.4k params)": lambda: k.sgd_update(p, grads, bufs, 1e-9, 0.9, 5e-4, True),
        }
    return cases


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def end_to_end(epochs, pure):
    env = dict(os.environ, SPFILTER_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(epochs=epochs)],
                         env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--epochs", type=int, default=20)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    cases = kernel_cases(np.random.default_rng(0))
    py_cases = cases(_pykernels)
    c_cases = cases(_kernels) if _kernels is not None else {}
    print(f"{'kernel':<28} {'python us':>10} {'compiled us':>12} {'speedup':>8}")
    for name, fn in py_cases.items():
        t_py = best_time(fn, args.repeat) * 1e6
        if name in c_cases:
            t_c = best_time(c_cases[name], args.repeat) * 1e6
            print(f"{name:<28} {t_py:>10.1f} {t_c:>12.1f} {t_py / t_c:>7.2f}x")
        else:
            print(f"{name:<28} {t_py:>10.1f} {'-':>12} {'-':>8}")
    t_py = end_to_end(args.epochs, pure=True)
    line = f"{f'train {args.epochs} epochs (s)':<28} {t_py:>10.2f}"
    if _kernels is not None:
        t_c = end_to_end(args.epochs, pure=False)
        line += f" {t_c:>12.2f} {t_py / t_c:>7.2f}x"
    print(line)


if __name__ == "__main__":
    main()
