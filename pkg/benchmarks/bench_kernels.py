"""
Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times each kernel on desk-scale shapes (25 library columns, 2500 pixels,
200 bands) and a full 200-iteration solve with each backend patched in.
"""

import argparse
import timeit

import numpy as np
from threadpoolctl import threadpool_limits

from svasu import _fallback, solver
from svasu.datamodel import SolverConfig
from svasu.library import segment_library
from svasu.synthgen import SynthConfig, make_scene

try:
    from svasu import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_step(backends, repeat):
    rng = np.random.default_rng(0)
    shape = (25, 2500)
    x = rng.random(shape) + 1e-3
    lin = rng.standard_normal(shape)
    den = rng.random(shape)
    neg = rng.random(shape)
    for name, mod in backends:
        t = best_of(lambda: mod.multiplicative_step(x, lin, den, neg, 1e-12), repeat, 50)
        print(f"multiplicative_step 25x2500  {name:8s} {t * 1e3:8.3f} ms")


def bench_windows(backends, repeat):
    image = np.random.default_rng(1).random((50, 50, 200))
    for name, mod in backends:
        t = best_of(lambda: mod.window_scores(image, 1), repeat, 1)
        print(f"window_scores 50x50x200 r=1  {name:8s} {t * 1e3:8.3f} ms")


def bench_solve(backends, repeat):
    scene = make_scene(SynthConfig(n_pixels=2500, seed=0))
    seg = segment_library(scene.insitu)
    cfg = SolverConfig(max_iters=200, rel_tol=1e-300)
    original = solver.multiplicative_step
    try:
        for name, mod in backends:
            solver.multiplicative_step = mod.multiplicative_step
            t = best_of(lambda: solver.svasu_solve(scene.cube, seg.endmembers, seg.variability, cfg),
                        max(1, repeat // 2), 1)
            print(f"svasu_solve 200 iterations   {name:8s} {t:8.3f} s")
    finally:
        solver.multiplicative_step = original


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    backends = [("python", _fallback)]
    if _ckernels is None:
        print("compiled kernels not built; timing the fallback only")
    else:
        backends.append(("cython", _ckernels))
    with threadpool_limits(limits=args.threads):
        bench_step(backends, args.repeat)
        bench_windows(backends, args.repeat)
        bench_solve(backends, args.repeat)


if __name__ == "__main__":
    main()
