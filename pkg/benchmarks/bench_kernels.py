"""Time the numba kernels against the pure-numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Shapes match one minibatch of the default model (batch 32, 4 x 128 frames,
32 base channels). The first numba call per kernel is a warm-up and is not
timed. Prints one row per kernel plus a full training step.
"""

import argparse
import timeit

import numpy as np

from compodiff.compose import ModelConfig, build_model, decomposition_loss
from compodiff.numerics import Tensor, backward
from compodiff.numerics import _kernels as K


def kernel_cases(rng):
    x = rng.standard_normal((32, 64, 64))
    w = rng.standard_normal((64, 64, 3))
    g = rng.standard_normal((32, 64, 64))
    xhat, inv = K.group_norm_forward_np(x, 8, 1e-5)[:2]
    return {
        "conv1d forward": lambda: K.conv1d_forward(x, w, 1, 1),
        "conv1d backward": lambda: K.conv1d_backward(x, w, g, 1, 1),
        "group norm forward": lambda: K.group_norm_forward(x, 8, 1e-5),
        "group norm backward": lambda: K.group_norm_backward(xhat, inv, g, 8),
    }


def train_step(model, batch):
    def run():
        loss = decomposition_loss(model, Tensor(batch), np.random.default_rng(0))
        backward(loss)
        model.zero_grad()
    return run


def timed(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    cases["training step (B=32)"] = train_step(build_model(ModelConfig()), rng.standard_normal((32, 4, 128)))

    print(f"{'case':<24}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for flag in (False, True):
            K.USE_NUMBA = flag
            times[flag] = timed(fn, args.repeat) * 1e3
        print(f"{name:<24}{times[False]:>12.2f}{times[True]:>12.2f}{times[False] / times[True]:>10.2f}")


if __name__ == "__main__":
    main()
