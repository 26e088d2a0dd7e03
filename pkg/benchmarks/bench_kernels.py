"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--batch 1 8 64] [--repeat 20]

Reports per-call wall time of one objective forward/backward pass and one
Adam step at the default model size, plus the speedup. The compiled objective
works frame by frame with BLAS matrix-vector calls, so it is fastest for the
small batches used in training; numpy's batched matrix products catch up as
the batch grows.
"""

import argparse
import time

import numpy as np

from cdvae import kernels
from cdvae.model import CdvaeParams, LossWeights, ModelConfig, Objective, draw_noise
from cdvae.nn import Rng


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, nargs="+", default=[1, 8, 64])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    cfg = ModelConfig()
    params = CdvaeParams.initialize(cfg, ["S0", "S1"], Rng(0))
    r = np.random.default_rng(0)
    w = LossWeights().as_array()
    size = params.store.data.size
    grad = r.normal(size=size)
    print(f"{size} parameters, best of {args.repeat}")

    adam = {}
    for name, backend in available().items():
        data, m, v = params.store.data.copy(), np.zeros(size), np.zeros(size)
        adam[name] = best_of(lambda: backend.adam_update(data, grad, m, v, 1, 1e-4, 0.9, 0.999, 1e-8),
                             args.repeat)
        print(f"adam_update  {name:>9}: {1e3 * adam[name]:8.3f} ms")
    if len(adam) == 2:
        print(f"adam_update  speedup  : {adam['python'] / adam['compiled']:.2f}x")

    for n in args.batch:
        x_sp, x_mcc = r.normal(size=(n, cfg.sp_dim)), r.normal(size=(n, cfg.mcc_dim))
        spk = r.integers(0, 2, n)
        noise = draw_noise(Rng(1), n, cfg.latent_dim, Objective.CDVAE)
        times = {}
        for name, backend in available().items():
            kernel = backend.ObjectiveKernel(params.copy())
            times[name] = best_of(
                lambda: kernel.loss_and_grad(x_sp, x_mcc, spk, noise, w, Objective.CDVAE.code, False),
                args.repeat)
        line = "  ".join(f"{k} {1e3 * t:8.3f} ms" for k, t in times.items())
        if len(times) == 2:
            line += f"  speedup {times['python'] / times['compiled']:.2f}x"
        print(f"loss_and_grad batch {n:>4}: {line}")


def available() -> dict:
    out = {}
    for name in ("python", "compiled"):
        try:
            out[name] = kernels.get(name)
        except ImportError as e:
            print(f"{name}: unavailable ({e})")
    return out

if __name__ == "__main__":
    main()
