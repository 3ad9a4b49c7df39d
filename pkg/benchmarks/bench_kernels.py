"""Time the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on a workload shaped like the default synthetic sweep; both
paths are checked for identical output before timing. The numba path is
warmed up once so compilation time is not counted.
"""

import argparse
import timeit

import numpy as np

from recbench import _kernels


def workloads(rng):
    # 2000 sessions of 1..20 distinct items over a 200-item catalog
    sessions = [rng.permutation(200)[: int(rng.integers(1, 21))] for _ in range(2000)]
    flat = np.concatenate(sessions)
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in sessions])])
    conv = rng.normal(size=(128, 8, 30, 8))
    pooled, arg = _kernels.maxpool_forward(conv, 2, 2, use_numba=False)
    grad = rng.normal(size=pooled.shape)
    emb = rng.normal(size=(10, 32))
    return {
        "pair_codes": lambda nb: _kernels.pair_codes(flat, offsets, 200, use_numba=nb),
        "maxpool_forward": lambda nb: _kernels.maxpool_forward(conv, 2, 2, use_numba=nb),
        "maxpool_backward": lambda nb: _kernels.maxpool_backward(grad, arg, conv.shape, 2, 2, use_numba=nb),
        "ild_curve (600 lists)": lambda nb: [_kernels.ild_curve(emb, use_numba=nb) for _ in range(600)],
    }


def same(a, b):
    if isinstance(a, (tuple, list)):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-12) if a.dtype.kind == "f" else np.array_equal(np.sort(a), np.sort(b))


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions per kernel (best is reported)")
    args = parser.parse_args()
    if not _kernels.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<24}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}  match")
    for name, fn in workloads(np.random.default_rng(0)).items():
        ok = same(fn(True), fn(False))  # also warms up the jit
        t_np = min(timeit.repeat(lambda: fn(False), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn(True), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<24}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>9.1f}x  {ok}")


if __name__ == "__main__":
    main()
