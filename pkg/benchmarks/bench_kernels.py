"""Compare the numba kernels with the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--samples 20]

Kernel timings call both implementations side by side.  The end-to-end RDA
timing runs in child processes because the backend is chosen at import time
(``RDA_DISABLE_NUMBA=1`` selects numpy).
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import timeit
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "tests" / "data"


def best_of(fn, repeat):
    fn()  # warm up (triggers compilation for numba)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(repeat):
    from rdattack import kernels
    from rdattack.netcore import init_network
    from rdattack.rotation import generate_rotation_set

    rng = np.random.default_rng(0)
    net = init_network([784, 256, 128, 10], seed=0)
    layer = net.layers[0]
    X64 = rng.random((64, 784), dtype=np.float32)
    x = rng.random(784, dtype=np.float32)
    v = rng.standard_normal(784).astype(np.float32)
    rset = generate_rotation_set(784, 10, 180, rng)
    order = np.arange(len(rset), dtype=np.int64)
    eps = np.float32(0.1)
    current = np.clip(x + eps * np.sign(v), 0, 1).astype(np.float32)
    out = np.empty((64, 784), dtype=np.float32)
    draws = rng.integers(0, 784 - np.arange(10), size=(360, 10))

    cases = {
        "dense_forward 64x784->256": lambda k: k["dense_forward"](X64, layer.weight, layer._wt, layer.bias, True),
        "softmax_rows 64x10": lambda k: k["softmax_rows"](X64[:, :10].astype(np.float64)),
        "sample_indices 360x10": lambda k: k["sample_indices"](draws, 784),
        "rotate_pairs l=10": lambda k: k["rotate_pairs"](v, rset.indices[0], rset.cos[0], rset.sin[0]),
        "build_candidates 64": lambda k: k["build_candidates"](
            x, v, current, rset.indices, rset.cos, rset.sin, order, 0, eps, True, out
        ),
    }
    fast = kernels.numba_kernels()
    rows = []
    for name, call in cases.items():
        t_np = best_of(lambda: call(kernels.NUMPY_KERNELS), repeat)
        t_nb = best_of(lambda: call(fast), repeat)
        rows.append((name, t_np, t_nb))
    return rows


def rda_child(model_path, samples):
    """Time RDA on the first correctly classified test samples; prints JSON."""
    from rdattack import BACKEND
    from rdattack.attacks import AttackConfig, rda
    from rdattack.datasets import load_idx
    from rdattack.evalharness import select_correctly_classified
    from rdattack.netcore import load_model

    net = load_model(model_path)
    ds = load_idx(DATA / "mnist5k-test-images-idx3-ubyte.gz", DATA / "mnist5k-test-labels-idx1-ubyte.gz")
    ds = select_correctly_classified(net, ds).head(samples)
    cfg = AttackConfig(epsilon=0.05)
    rda(net, net, ds.samples[0], ds.labels[0], cfg, np.random.default_rng(0))  # warm up
    queries = 0
    start = timeit.default_timer()
    for i in range(len(ds)):
        queries += rda(net, net, ds.samples[i], int(ds.labels[i]), cfg, np.random.default_rng(i)).queries
    elapsed = timeit.default_timer() - start
    print(json.dumps({"backend": BACKEND, "seconds": elapsed, "queries": queries}))


def rda_table(samples, epochs):
    from rdattack.datasets import load_idx
    from rdattack.netcore import TrainConfig, init_network, save_model, train

    tr = load_idx(DATA / "mnist5k-train-images-idx3-ubyte.gz", DATA / "mnist5k-train-labels-idx1-ubyte.gz")
    net = train(init_network([784, 256, 128, 10], seed=0), tr, TrainConfig(epochs=epochs))
    results = []
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bench.rdm"
        save_model(net, path)
        for flag in ("0", "1"):
            env = dict(os.environ, RDA_DISABLE_NUMBA=flag)
            out = subprocess.run(
                [sys.executable, __file__, "--rda-child", str(path), "--samples", str(samples)],
                env=env, capture_output=True, text=True, check=True,
            )
            results.append(json.loads(out.stdout.strip().splitlines()[-1]))
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--samples", type=int, default=20, help="samples for the end-to-end RDA timing")
    parser.add_argument("--epochs", type=int, default=3, help="training epochs for the benchmark model")
    parser.add_argument("--rda-child", metavar="MODEL", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.rda_child:
        rda_child(args.rda_child, args.samples)
        return

    print(f"{'kernel':<28}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, t_np, t_nb in kernel_table(args.repeat):
        print(f"{name:<28}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>10.2f}")

    print(f"\nRDA, eps=0.05, {args.samples} samples")
    for r in rda_table(args.samples, args.epochs):
        rate = r["queries"] / r["seconds"] if r["seconds"] else float("inf")
        print(f"  {r['backend']:<6} {r['seconds']:8.2f} s  {r['queries']:8d} queries  {rate:10.0f} queries/s")


if __name__ == "__main__":
    main()
