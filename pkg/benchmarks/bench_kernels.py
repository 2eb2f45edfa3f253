#!/usr/bin/env python3
"""Timing comparison of the compiled and pure-numpy kernel backends.

Each hot kernel runs on full-scale shapes, then one desk-scale episode
runs end to end, under every available backend.  Numbers are wall-clock
microseconds per call (median of --repeats batches).

    python3 benchmarks/bench_kernels.py --repeats 50
"""

import argparse
import statistics
import time

import numpy as np

from evoworld import agent, nn
from evoworld.envs import EnvConfig
from evoworld.genome import ArchitectureConfig, init_genome
from evoworld.rng import RandomSource


def time_call(fn, repeats, inner=10):
    samples = []
    fn()  # warm up caches and any lazy setup
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return statistics.median(samples) * 1e6


def build_cases():
    rng = np.random.default_rng(0)
    arch = ArchitectureConfig.full_scale()
    cases = []

    conv = nn.LayerSpec("conv", 3, 32, kernel=4, stride=2,
                        activation="relu", label="enc0")
    img = rng.random((3, 64, 64))
    cw = rng.standard_normal(conv.param_count) * 0.05
    cases.append(("conv 3->32 on 64px", lambda: nn.conv2d_forward(img, cw, conv)))

    lin = nn.LayerSpec("linear", arch.z_dim + arch.hidden_dim, arch.action_dim,
                       activation="tanh", label="ctrl")
    v = rng.standard_normal(lin.in_size)
    lw = rng.standard_normal(lin.param_count) * 0.05
    cases.append(("controller 288->3", lambda: nn.linear_forward(v, lw, lin)))

    n_in = arch.z_dim + arch.action_dim
    hidden = arch.hidden_dim
    x = rng.standard_normal(n_in)
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    ww = rng.standard_normal(4 * (hidden * (n_in + hidden) + hidden)) * 0.02
    cases.append((f"lstm {n_in}->{hidden}", lambda: nn.lstm_cell_forward(x, h, c, ww)))

    full_genome = init_genome(arch, RandomSource(1))
    full_policy = agent.Policy(full_genome)
    full_state = agent.initial_state(arch)
    obs = rng.random((64, 64, 3))
    cases.append(("policy step, full scale",
                  lambda: full_policy.step(full_state, obs)))
    return cases


def bench_rollout():
    arch = ArchitectureConfig.desk_scale()
    genome = init_genome(arch, RandomSource(2))
    env = EnvConfig.dodge_desk()
    t0 = time.perf_counter()
    result = agent.rollout(genome, env, 5)
    elapsed = time.perf_counter() - t0
    return elapsed * 1e3, result.steps_survived


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=50,
                        help="timing batches per kernel (default 50)")
    args = parser.parse_args()

    backends = nn.available_backends()
    print(f"backends available: {', '.join(backends)}")
    rows = {}
    for backend in backends:
        nn.set_backend(backend)
        for name, fn in build_cases():
            rows.setdefault(name, {})[backend] = time_call(fn, args.repeats)
        ms, steps = bench_rollout()
        rows.setdefault("desk rollout (per episode)", {})[backend] = ms * 1e3
        rows["desk rollout (per episode)"].setdefault("_steps", steps)

    width = max(len(n) for n in rows)
    header = f"{'case':<{width}}  " + "  ".join(f"{b:>12}" for b in backends)
    print(header)
    print("-" * len(header))
    for name, timing in rows.items():
        cells = "  ".join(f"{timing[b]:>10.1f}us" for b in backends)
        extra = f"  ({timing['_steps']} frames)" if "_steps" in timing else ""
        print(f"{name:<{width}}  {cells}{extra}")
    if len(backends) == 2:
        a, b = backends
        print()
        for name, timing in rows.items():
            slow, fast = max(timing[a], timing[b]), min(timing[a], timing[b])
            winner = a if timing[a] <= timing[b] else b
            print(f"{name:<{width}}  {winner} {slow / fast:.1f}x faster")


if __name__ == "__main__":
    main()
