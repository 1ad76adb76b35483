"""Benchmark the sequential decision kernel: numba jit vs the numpy fallback.

The loop is the engine's hot path: every stream instance is scored against a
prototype matrix that grows whenever a novelty is created, so the whole
batch cannot be collapsed into one matrix product.

Usage: python benchmarks/bench_decide.py [--samples N] [--dim D] [--protos P]
"""

import argparse
import os
import time

import numpy as np


def make_case(n_samples, dim, n_protos, seed=0, noise=0.04, novel_fraction=0.02):
    """Realistic stream: most samples scatter tightly around existing
    prototypes, a small fraction lands far from everything (novelties)."""
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(n_protos, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    which = rng.integers(0, n_protos, size=n_samples)
    feats = protos[which] + noise * rng.normal(size=(n_samples, dim))
    outliers = rng.random(n_samples) < novel_fraction
    feats[outliers] = rng.normal(size=(int(outliers.sum()), dim))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    return feats, protos


def run(backend, feats, protos, tau, batch_size, repeats):
    os.environ["PROTOSTREAM_BACKEND"] = backend
    from protostream import _kernels

    # warm-up batch triggers jit compilation outside the timed region
    warm = np.empty((protos.shape[0] + batch_size, feats.shape[1]))
    warm[: protos.shape[0]] = protos
    _kernels.decide_batch(feats[:batch_size], warm, protos.shape[0], tau)

    best = float("inf")
    created_total = 0
    for _ in range(repeats):
        start = time.perf_counter()
        n_protos = protos.shape[0]
        buf = np.empty((n_protos + feats.shape[0], feats.shape[1]))
        buf[:n_protos] = protos
        created_total = 0
        for lo in range(0, feats.shape[0], batch_size):
            batch = feats[lo : lo + batch_size]
            _, _, created, n_protos = _kernels.decide_batch(batch, buf, n_protos, tau)
            created_total += int(created.sum())
        best = min(best, time.perf_counter() - start)
    return best, created_total


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=50_000)
    parser.add_argument("--dim", type=int, default=256)
    parser.add_argument("--protos", type=int, default=100)
    parser.add_argument("--tau", type=float, default=0.6)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--novel-fraction", type=float, default=0.002)
    args = parser.parse_args()

    feats, protos = make_case(args.samples, args.dim, args.protos,
                              novel_fraction=args.novel_fraction)
    print(f"{args.samples} samples, d={args.dim}, {args.protos} initial prototypes, "
          f"tau={args.tau}, batch={args.batch}, best of {args.repeats}")
    results = {}
    for backend in ("numpy", "numba"):
        try:
            elapsed, created = run(backend, feats, protos, args.tau, args.batch, args.repeats)
        except RuntimeError as exc:
            print(f"{backend:>6}: unavailable ({exc})")
            continue
        results[backend] = elapsed
        rate = args.samples / elapsed / 1e3
        print(f"{backend:>6}: {elapsed:8.3f}s  ({rate:9.1f} K samples/s, {created} novelties)")
    if len(results) == 2:
        print(f"speedup: {results['numpy'] / results['numba']:.1f}x")


if __name__ == "__main__":
    main()
