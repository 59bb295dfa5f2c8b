"""Time each compiled kernel against its numpy twin, plus one training epoch.

    python3 benchmarks/bench_kernels.py [--repeat N]

Kernel timings come from one process (the twins are importable side by
side). The epoch timing runs a child process with GRASPVAE_DISABLE_JIT=1 for
the numpy column, since that flag is read at import time.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from graspvae import _jit, kernels
from graspvae.hgg_vae import build_hgg

EPOCH_SNIPPET = """
import time, numpy as np
from graspvae.eval_harness import SyntheticGraspTask, generate_primitives
from graspvae.hgg_vae import TrainingConfig, build_hgg, train
data = generate_primitives(SyntheticGraspTask(), 75, np.random.default_rng(0))
train(build_hgg(seed=0), data, TrainingConfig(epochs=1))  # warm-up / compile
t = time.perf_counter()
train(build_hgg(seed=0), data, TrainingConfig(epochs=20))
print((time.perf_counter() - t) / 20)
"""


def cases():
    rng = np.random.default_rng(0)
    net = build_hgg(seed=0).nets["dec_main"]
    x = rng.standard_normal((16, net.input_width))
    zbuf, abuf, _ = kernels.forward_numpy(net.params, net.layout, x)
    g = rng.standard_normal((16, net.output_width))
    grads = np.zeros_like(net.params)
    p = rng.standard_normal(30_000)
    m, v, gp = np.zeros_like(p), np.zeros_like(p), rng.standard_normal(30_000)
    pts = rng.uniform(size=(150, 8))
    sym = rng.standard_normal((150, 150))
    sym = sym + sym.T
    return {
        "forward": (net.params, net.layout, x),
        "backward": (net.params, net.layout, x, zbuf, abuf, g, grads),
        "adam_update": (p, gp, m, v, 1e-3, 0.9, 0.999, 1e-8, 1),
        "sq_distances": (pts,),
        "center_gram": (sym,),
        "jacobi_eigh": (sym,),
    }


def epoch_seconds(disable_jit):
    env = dict(os.environ, GRASPVAE_DISABLE_JIT="1" if disable_jit else "0")
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _jit.USE_NUMBA:
        sys.exit("numba disabled or missing; nothing to compare")
    print(f"{'kernel':<14}{'numba (us)':>14}{'numpy (us)':>14}{'speedup':>10}")
    for name, call_args in cases().items():
        fast, slow = kernels.KERNEL_PAIRS[name]
        fast(*call_args)  # compile
        n = 3 if name == "jacobi_eigh" else 200
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=n, repeat=args.repeat)) / n
        t_slow = min(timeit.repeat(lambda: slow(*call_args), number=n, repeat=args.repeat)) / n
        print(f"{name:<14}{t_fast * 1e6:>14.1f}{t_slow * 1e6:>14.1f}{t_slow / t_fast:>9.1f}x")
    fast, slow = epoch_seconds(False), epoch_seconds(True)
    print(f"{'train epoch':<14}{fast * 1e6:>14.0f}{slow * 1e6:>14.0f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
