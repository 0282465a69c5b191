"""Compare the compiled kernels with the numpy reference.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints per-call times for both backends at the sizes the experiment uses,
plus one short finetuning run with each backend swapped in.
"""

import argparse
import timeit

import numpy as np

from conft import kernels
from conft.kernels import _reference

try:
    from conft.kernels import _ckernels
except ImportError:
    _ckernels = None


def unit_rows(rng, n, r):
    x = rng.standard_normal((n, r))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def contrastive_case(n_support, n_dt, r, seed=0):
    rng = np.random.default_rng(seed)
    Z = unit_rows(rng, n_support + n_dt, r)
    anchors = np.arange(n_support - n_support % 2)
    positives = anchors ^ 1
    labels = np.arange(n_support) // 5
    W = np.zeros((len(anchors), len(Z)))
    W[:, :n_support] = labels[anchors][:, None] != labels[None, :]
    W[:, n_support:] = 1.3
    return Z, anchors, positives, W


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench(name, make_call, repeat, number):
    ref = best_of(make_call(_reference), repeat, number)
    line = f"{name:<34} numpy {ref * 1e6:9.1f} us"
    if _ckernels is not None:
        fast = best_of(make_call(_ckernels), repeat, number)
        line += f"   cython {fast * 1e6:9.1f} us   speedup {ref / fast:5.2f}x"
    print(line)


def finetune_once():
    from conft.finetune import FinetuneConfig, finetune
    from conft.losses import LossConfig
    from conft.model import init_model
    from conft.taskgen import build_distractor_pool, generate_synthetic_domain, sample_episode

    novel = generate_synthetic_domain(10, 30, 32, 3.0, 1.0, 0)
    base = generate_synthetic_domain(20, 40, 32, 3.0, 1.0, 1, class_offset=100)
    prior = init_model((32, 64, 16), 2)
    task = sample_episode(novel, 5, 5, 15, 0)
    pool = build_distractor_pool(base)
    cfg = FinetuneConfig(epochs=100, batch_size=128, loss=LossConfig(temperature=0.25))
    return lambda: finetune(prior, task, pool, cfg)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")

    for n_dt, r in [(0, 16), (128, 16), (128, 64), (512, 64)]:
        case = contrastive_case(25, n_dt, r)
        bench(f"contrastive_terms 5w5s dt={n_dt} r={r}",
              lambda impl, c=case: (lambda: impl.contrastive_terms(*c, 0.25, 0.05)), args.repeat, 200)

    for n, r in [(25, 16), (75, 16), (200, 64)]:
        rng = np.random.default_rng(1)
        z, labels = unit_rows(rng, n, r), np.arange(n) % 5
        bench(f"cluster_sums n={n} r={r}",
              lambda impl, z=z, labels=labels: (lambda: impl.cluster_sums(z, labels)), args.repeat, 500)

    run = finetune_once()
    times = {}
    saved = kernels.contrastive_terms, kernels.cluster_sums
    for name, impl in [("numpy", _reference), ("cython", _ckernels)]:
        if impl is None:
            continue
        kernels.contrastive_terms, kernels.cluster_sums = impl.contrastive_terms, impl.cluster_sums
        times[name] = best_of(run, max(1, args.repeat // 2), 1)
    kernels.contrastive_terms, kernels.cluster_sums = saved
    print("finetune 100 epochs, batch 128     " + "   ".join(f"{k} {v:.3f} s" for k, v in times.items()))


if __name__ == "__main__":
    main()
