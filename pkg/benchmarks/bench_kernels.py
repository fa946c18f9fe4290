"""Compare the compiled and pure-Python kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``. Also times one subspace
rollout step and the PCA inverse at several particle counts.
"""

import argparse
import time

import numpy as np

from subgns import gns, kernels, pca


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for n in (500, 2000, 8000):
        pos = rng.random((n, 3)) * (n / 500) ** (1 / 3) * 0.25
        vel = rng.normal(size=(n, 3))
        rpos, rvel = rng.random((20, 3)) * 0.25, rng.normal(size=(20, 3))
        vals = rng.normal(size=(n * 4, 128))
        idx = rng.integers(0, n // 10, size=n * 4).astype(np.int64)
        cases = {
            "pair_forces": lambda m: m.pair_forces(pos, vel, 0.01, 1e4, 10.0),
            "rigid_forces": lambda m: m.rigid_forces(pos, vel, rpos, rvel, 0.02, 1e4, 10.0),
            "segment_sum": lambda m: m.segment_sum(vals, idx, n // 10),
        }
        for name, call in cases.items():
            py = best_of(lambda: call(kernels.python), repeat)
            cy = float("nan")
            if kernels.compiled is not None:
                cy = best_of(lambda: call(kernels.compiled), repeat)
            rows.append((name, n, py * 1e3, cy * 1e3, py / cy))
    print(f"{'kernel':<14}{'n':>7}{'python ms':>12}{'cython ms':>12}{'speedup':>9}")
    for name, n, py, cy, sp in rows:
        print(f"{name:<14}{n:>7}{py:>12.3f}{cy:>12.3f}{sp:>9.1f}")


def bench_step(repeat, r=8, n_rigid=32):
    cfg = gns.GnsConfig()
    model = gns.init_model(cfg, 0)
    rng = np.random.default_rng(0)
    types = np.array([0] * r + [1] * n_rigid)
    graph = gns.build_graph(rng.normal(size=(cfg.d, r + n_rigid, 3)), types, cfg)
    for dtype in (np.float64, np.float32):
        step = gns.FastStep(model, dtype=dtype)
        step(graph)
        ms = best_of(lambda: step(graph), repeat) * 1e3
        print(f"rollout step N={r + n_rigid} {np.dtype(dtype).name}: {ms:.2f} ms")


def bench_inverse(repeat, r=8, frames=50):
    rng = np.random.default_rng(0)
    print(f"{'n':>8}{'pca inverse ms':>16}{'ms per 1k particles':>22}")
    for n in (1000, 4000, 16000, 64000):
        U = np.linalg.qr(rng.normal(size=(n, r)))[0]
        basis = pca.PcaBasis(U, rng.normal(size=n), np.ones(r), r)
        Sp = rng.normal(size=(3 * frames, r))
        ms = best_of(lambda: pca.inverse_transform(Sp, basis), repeat) * 1e3
        print(f"{n:>8}{ms:>16.3f}{ms / n * 1e3:>22.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench_kernels(max(3, args.repeat // 4))
    bench_step(args.repeat)
    bench_inverse(args.repeat)


if __name__ == "__main__":
    main()
