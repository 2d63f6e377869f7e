"""Time the compiled and numpy kernel backends on ResNet-sized workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each row reports the best of N runs per backend and the speed-up of the
compiled kernels. Outputs of both backends are compared before timing.
"""
import argparse
import timeit

import numpy as np

from pantry.tensor import Tape, Tensor, backward, conv2d, kernels, max_pool2d, tsum


def _cases(rng):
    x56 = rng.random((4, 64, 58, 58)).astype(np.float32)
    x112 = rng.random((2, 64, 114, 114)).astype(np.float32)
    cols = kernels.im2col(x56, 3, 3, 1)
    grad_pool = rng.random((2, 64, 56, 56)).astype(np.float32)
    _, arg = kernels.maxpool_forward(x112, 3, 2)

    xc = Tensor(rng.random((4, 64, 28, 28)).astype(np.float32), requires_grad=True)
    wc = Tensor(rng.random((64, 64, 3, 3)).astype(np.float32) * 0.01, requires_grad=True)

    def conv_step():
        with Tape():
            loss = tsum(conv2d(xc, wc, None, 1, 1))
        backward(loss)
        return wc.grad

    def pool_step():
        xp = Tensor(x112[:, :, 1:-1, 1:-1], requires_grad=True)
        with Tape():
            loss = tsum(max_pool2d(xp, 3, 2, 1))
        backward(loss)
        return xp.grad

    return {
        "im2col 4x64x58x58 k3": lambda: kernels.im2col(x56, 3, 3, 1),
        "col2im 4x64x58x58 k3": lambda: kernels.col2im(cols, x56.shape, 3, 3, 1),
        "maxpool fwd 2x64x114x114": lambda: kernels.maxpool_forward(x112, 3, 2),
        "maxpool bwd 2x64x114x114": lambda: kernels.maxpool_backward(grad_pool, arg, x112.shape, 3, 2),
        "conv2d 3x3 fwd+bwd": conv_step,
        "max_pool2d fwd+bwd": pool_step,
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(p, q) for p, q in zip(a, b))
    return np.allclose(a, b, rtol=1e-5, atol=1e-6)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; run `pip install -e . --no-build-isolation` first")
    previous = kernels.BACKEND
    rng = np.random.default_rng(0)
    cases = _cases(rng)
    timings: dict[str, dict[str, float]] = {}
    try:
        for backend in backends:
            kernels.use_backend(backend)
            for name, fn in cases.items():
                timings.setdefault(name, {})[backend] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        if len(backends) > 1:
            for name, fn in cases.items():
                outs = []
                for backend in backends:
                    kernels.use_backend(backend)
                    outs.append(fn())
                assert _same(outs[0], outs[1]), f"backends disagree on {name}"
    finally:
        kernels.use_backend(previous)

    header = f"{'case':<28}" + "".join(f"{b + ' ms':>12}" for b in backends)
    if len(backends) > 1:
        header += f"{'speed-up':>10}"
    print(header)
    for name, row in timings.items():
        line = f"{name:<28}" + "".join(f"{row[b] * 1e3:12.2f}" for b in backends)
        if len(backends) > 1:
            line += f"{row['python'] / row['cython']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
