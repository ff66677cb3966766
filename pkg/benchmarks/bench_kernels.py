"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py            # full sizes
    python benchmarks/bench_kernels.py --quick    # a few seconds
    python benchmarks/bench_kernels.py --json out.json

Each kernel is timed on identical inputs for both backends, and the outputs
are checked for exact equality before any timing is reported.
"""
import argparse
import json
import platform
import time

import numpy as np

from harq_delay import ChannelParams, HarqPolicy, QueueParams, SimConfig, run
from harq_delay._kernels import backend
from harq_delay.mi_stats import failure_probs, failure_probs_grid, mi_moments

SLOT = 125e-6
CHANNEL = ChannelParams(snr_d=10 ** -0.1, bandwidth_w=20e6, slot_duration=SLOT, payload_bits=2816)
POLICY = HarqPolicy((18, 11, 11, 13), (0.999, 0.999, 0.891119217220765))
PGD = (1.0, 200.0, SLOT, 1.0, 0.0, 0.999, 1000.0, 1e-4, 1e-5, 1e-7, 500)


def best_of(fn, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_evaluate(mod, calls):
    T = np.asarray(POLICY.n, float) / 14 * SLOT
    pf = failure_probs(POLICY.n, CHANNEL, mi_moments(CHANNEL))
    alpha = np.asarray(POLICY.alphas)

    def go():
        r = None
        for _ in range(calls):
            r = mod.evaluate(T, pf, alpha, 1.0, 200.0, SLOT)
        return r

    return go


def bench_pgd_batch(mod, cells):
    rng = np.random.default_rng(0)
    n = rng.integers(4, 40, size=(cells, 4))
    T2 = n / 14 * SLOT
    pf2 = failure_probs_grid(n, CHANNEL, mi_moments(CHANNEL))
    starts = np.zeros((cells, 3))
    return lambda: mod.pgd_batch(T2, pf2, starts, *PGD)


def bench_simulate(name, packets):
    cfg = SimConfig(POLICY, CHANNEL, POLICY.feedback(1.0), QueueParams(200.0),
                    num_packets=packets, warmup_packets=packets // 100, seed=1, backend=name)
    return lambda: run(cfg).raw


def same(a, b):
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(same(a[k], b[k]) for k in a)
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--quick", action="store_true")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--json", metavar="PATH")
    args = p.parse_args(argv)
    scale = 0.1 if args.quick else 1.0

    evals = int(20_000 * scale)
    cells = int(200 * scale)
    packets = int(200_000 * scale)
    cases = [
        (f"evaluate x{evals}", lambda m: bench_evaluate(m, evals)),
        (f"pgd_batch {cells} cells", lambda m: bench_pgd_batch(m, cells)),
        (f"simulate {packets} packets", None),
    ]
    py, cy = backend("python"), backend("cython")
    results = []
    print(f"{'kernel':<28}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for label, make in cases:
        if make is None:
            fp, fc = bench_simulate("python", packets), bench_simulate("cython", packets)
        else:
            fp, fc = make(py), make(cy)
        tp, op = best_of(fp, args.repeat)
        tc, oc = best_of(fc, args.repeat)
        if not same(op, oc):
            raise SystemExit(f"{label}: backends disagree")
        results.append(dict(kernel=label, python_s=tp, cython_s=tc, speedup=tp / tc))
        print(f"{label:<28}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x")

    if args.json:
        meta = dict(python=platform.python_version(), machine=platform.machine(), numpy=np.__version__)
        with open(args.json, "w") as fh:
            json.dump(dict(meta=meta, results=results), fh, indent=2)


if __name__ == "__main__":
    main()
