"""Acceptance gate: one test per stated criterion, one report line each.

Criteria 7 and 9 share a module-scoped slate of twenty desk-scale runs
(ten seeds, two protection treatments) and report their comparison lines
even when the directional claim fails, so a red run still shows the
numbers it was judged on.
"""

import itertools
import json
import math
import statistics
import time

import numpy as np
import pytest
from scipy import stats as sps
from scipy.ndimage import gaussian_filter

import conftest
from conftest import make_genome, objective_pop
from test_nn_core import ident, naive_conv, naive_linear, relu, scalar_lstm

from evoworld import agent, analysis, cli, nn
from evoworld.envs import EnvConfig, env_reset
from evoworld.genome import (
    ArchitectureConfig,
    Genome,
    MutationEvent,
    count_params,
    mutate,
)
from evoworld.harness import (
    RunConfig,
    canonical_rows,
    log_digest,
    read_log,
    run_experiment,
)
from evoworld.moea import (
    POLICY_KINDS,
    Individual,
    Population,
    ProtectionPolicy,
    apply_protection,
    increment_ages,
    rank_population,
)
from evoworld.rng import RandomSource

TOY = ArchitectureConfig(image_size=8, channels=(2,), kernel=4, stride=2,
                         z_dim=2, hidden_dim=3, n_mixtures=2, action_dim=1)

# fixed, logged seed slate for the treatment comparison (criteria 7 and 9)
SEP_SEEDS = tuple(range(201, 211))


def note(num, title, ok, detail):
    line = f"criterion {num} {'PASS' if ok else 'FAIL'} - {title}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# 1 -----------------------------------------------------------------------


def test_criterion_1_parameter_counts(capsys):
    t0 = time.perf_counter()
    rc = cli.main(["count-params", "--scale", "full"])
    dt = time.perf_counter() - t0
    lines = capsys.readouterr().out.splitlines()
    ok = (rc == 0 and "visual 755744" in lines and "controller 867" in lines
          and dt < 1.0)
    with capsys.disabled():
        note(1, "parameter counts", ok,
             f"full-scale visual 755744 and controller 867 printed exactly ({dt:.2f}s)")
    assert ok


# 2 -----------------------------------------------------------------------


def bf_fronts(points):
    """O(n^3) pairwise-dominance reference over (age, reward) tuples."""

    def dom(a, b):
        return (a[0] <= b[0] and a[1] >= b[1]) and (a[0] < b[0] or a[1] > b[1])

    remaining = list(range(len(points)))
    fronts = []
    while remaining:
        front = sorted(
            i for i in remaining
            if not any(dom(points[j], points[i]) for j in remaining if j != i)
        )
        fronts.append(front)
        remaining = [i for i in remaining if i not in front]
    return fronts


def bf_crowding(front, points):
    """Hand-formula crowding: boundaries inf, interior normalized gaps."""
    if len(front) <= 2:
        return {i: math.inf for i in front}
    dist = {i: 0.0 for i in front}
    for key in (lambda p: p[0], lambda p: p[1]):
        order = sorted(front, key=lambda i: key(points[i]))
        lo, hi = key(points[order[0]]), key(points[order[-1]])
        dist[order[0]] = dist[order[-1]] = math.inf
        if hi == lo:
            continue
        for pos in range(1, len(order) - 1):
            if dist[order[pos]] != math.inf:
                gap = key(points[order[pos + 1]]) - key(points[order[pos - 1]])
                dist[order[pos]] += gap / (hi - lo)
    return dist


def test_criterion_2_nsga_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(22)
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(1, 31))
        ages = rng.integers(0, 8, size=n)
        rewards = rng.uniform(0, 100, size=n)
        if trial % 2:
            rewards = np.round(rewards, 1)  # force duplicate objectives
        points = list(zip(ages.tolist(), rewards.tolist()))
        pop = objective_pop(points)
        fronts = rank_population(pop.members)
        assert [sorted(f) for f in fronts] == bf_fronts(points)
        for front in fronts:
            want = bf_crowding(front, points)
            for i in front:
                got = pop.members[i].crowding
                if want[i] == math.inf:
                    assert got == math.inf
                else:
                    worst = max(worst, abs(got - want[i]))
                    assert abs(got - want[i]) <= 1e-9
    dt = time.perf_counter() - t0
    ok = dt < 10.0
    note(2, "NSGA-II oracle equivalence", ok,
         f"200 populations exact front match, crowding within {worst:.1e} ({dt:.2f}s)")
    assert ok


# 3 -----------------------------------------------------------------------


def test_criterion_3_kernel_references():
    t0 = time.perf_counter()
    rng = np.random.default_rng(33)
    acts = {"identity": ident, "relu": relu, "tanh": np.tanh}
    worst = 0.0
    for trial in range(100):
        in_ch, out_ch = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        k, stride = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        size = int(rng.integers(k, k + 6))
        name = ("identity", "relu", "tanh")[trial % 3]
        spec = nn.LayerSpec("conv", in_ch, out_ch, kernel=k, stride=stride,
                            activation=name, label="c")
        img = rng.standard_normal((in_ch, size, size))
        flat = rng.standard_normal(spec.param_count)
        w = flat[: out_ch * in_ch * k * k].reshape(out_ch, in_ch, k, k)
        err = np.abs(nn.conv2d_forward(img, flat, spec)
                     - naive_conv(img, w, flat[w.size:], stride, acts[name])).max()
        worst = max(worst, err)
    for trial in range(100):
        n_in, n_out = int(rng.integers(1, 9)), int(rng.integers(1, 7))
        name = ("identity", "relu", "tanh")[trial % 3]
        spec = nn.LayerSpec("linear", n_in, n_out, activation=name, label="l")
        flat = rng.standard_normal(spec.param_count)
        v = rng.standard_normal(n_in)
        err = np.abs(nn.linear_forward(v, flat, spec)
                     - naive_linear(v, flat[: n_in * n_out].reshape(n_out, n_in),
                                    flat[n_in * n_out:], acts[name])).max()
        worst = max(worst, err)
    for _ in range(100):
        n_in, hidden = int(rng.integers(1, 6)), int(rng.integers(1, 7))
        flat = rng.standard_normal(4 * (hidden * (n_in + hidden) + hidden))
        w = flat[: 4 * hidden * (n_in + hidden)].reshape(4 * hidden, n_in + hidden)
        b = flat[w.size:]
        h = np.zeros(hidden)
        c = np.zeros(hidden)
        for _ in range(int(rng.integers(1, 4))):
            x = rng.standard_normal(n_in)
            h2, c2 = nn.lstm_cell_forward(x, h, c, flat)
            hr, cr = scalar_lstm(x, h, c, w, b)
            worst = max(worst, np.abs(h2 - hr).max(), np.abs(c2 - cr).max())
            h, c = h2, c2
    dt = time.perf_counter() - t0
    ok = worst < 1e-10 and dt < 30.0
    note(3, "kernel reference equivalence", ok,
         f"conv/linear/lstm 100 trials each, max |err| {worst:.1e} ({dt:.2f}s)")
    assert ok


# 4 -----------------------------------------------------------------------


def test_criterion_4_mutation_statistics():
    t0 = time.perf_counter()
    base = make_genome(TOY, 4)
    counts = {"visual": 0, "memory": 0, "controller": 0}
    chunks = []
    for i in range(30_000):
        child, event = mutate(base, 0.03, RandomSource(44, i))
        changed = [c for c in counts if child.segment(c) is not base.segment(c)]
        assert changed == [event.component]
        counts[event.component] += 1
        chunks.append(child.segment(event.component) - base.segment(event.component))
    noise = np.concatenate(chunks)
    p = sps.chisquare(list(counts.values())).pvalue
    mean, std = float(noise.mean()), float(noise.std())
    dt = time.perf_counter() - t0
    ok = (p > 0.01 and abs(mean) <= 0.05 * 0.03
          and abs(std - 0.03) <= 0.05 * 0.03 and dt < 60.0)
    note(4, "mutation statistics", ok,
         f"components {counts} (chi2 p={p:.3f}), noise mean {mean:.2e} "
         f"std {std:.5f} vs 0.03 over {noise.size} draws ({dt:.2f}s)")
    assert ok


# 5 -----------------------------------------------------------------------

# the reference simulator's reset rules, written out independently
REF_RESETS = {
    "dip": {"visual", "memory"},
    "controller-protect": {"controller"},
    "memory-and-controller-protect": {"memory", "controller"},
    "random-age": set(),
    "none": {"visual", "memory"},
}


def engine_trace(kind, seq, seed_parts):
    """Drive the engine's own bookkeeping: increment, inherit, protect."""
    policy = ProtectionPolicy(kind=kind)
    rng = RandomSource(55).derive(*seed_parts)
    ind = Individual(genome=None, id=0, age=0)
    ages = []
    for step, comp in enumerate(seq):
        increment_ages(Population(members=[ind], generation=step))
        child = Individual(genome=None, id=step + 1, age=ind.age, parent_id=ind.id)
        apply_protection(MutationEvent(comp, 0.03), child, policy,
                         rng.derive("age", step))
        ages.append(child.age)
        ind = child
    return ages


def reference_trace(kind, seq, seed_parts):
    """Straight-line restatement of the increment/reset rules."""
    rng = RandomSource(55).derive(*seed_parts)
    age = 0
    ages = []
    for step, comp in enumerate(seq):
        age += 1
        if kind == "random-age":
            age = int(rng.derive("age", step).integers(0, 21))
        elif comp in REF_RESETS[kind]:
            age = 0
        ages.append(age)
    return ages


def test_criterion_5_age_bookkeeping():
    t0 = time.perf_counter()
    events = ("visual", "memory", "controller")
    checked = 0
    for kind in POLICY_KINDS:
        for length in range(7):
            for idx, seq in enumerate(itertools.product(events, repeat=length)):
                parts = (kind, length, idx)
                assert engine_trace(kind, seq, parts) == reference_trace(kind, seq, parts)
                checked += 1
    dt = time.perf_counter() - t0
    ok = checked == 5 * 1093 and dt < 10.0
    note(5, "age bookkeeping", ok,
         f"all {checked} event sequences (length <= 6, five policies) match "
         f"the straight-line reference ({dt:.2f}s)")
    assert ok


# 6 -----------------------------------------------------------------------


def desk_run_cfg(out_dir, **kw):
    defaults = dict(
        arch=ArchitectureConfig.desk_scale(),
        env=EnvConfig.dodge_desk(),
        population_size=16,
        generations=10,
        master_seed=606,
        checkpoint_every=5,
        out_dir=str(out_dir),
    )
    defaults.update(kw)
    return RunConfig(**defaults)


def canonical_bytes(log_path):
    rows = canonical_rows(read_log(log_path))
    return json.dumps(rows, sort_keys=True).encode()


def test_criterion_6_determinism_and_resume(tmp_path):
    t0 = time.perf_counter()
    a = run_experiment(desk_run_cfg(tmp_path / "a"))
    b = run_experiment(desk_run_cfg(tmp_path / "b"))
    replay_ok = canonical_bytes(a["log"]) == canonical_bytes(b["log"])

    run_experiment(desk_run_cfg(tmp_path / "c", generations=5))
    c = run_experiment(desk_run_cfg(tmp_path / "c", generations=10), resume=True)
    resume_ok = canonical_bytes(a["log"]) == canonical_bytes(c["log"])
    digest = log_digest(read_log(a["log"]))

    dt = time.perf_counter() - t0
    ok = replay_ok and resume_ok and dt < 300.0
    note(6, "determinism and resume", ok,
         f"N=16 x 10 generations replay and interrupt/resume logs byte-identical "
         f"after dropping wall-clock fields (digest {digest[:12]}, {dt:.1f}s)")
    assert ok


# 7 and 9 ------------------------------------------------------------------


def separation_cfg(kind, seed, root):
    return RunConfig(
        arch=ArchitectureConfig.desk_scale(),
        env=EnvConfig.dodge_desk(),
        policy=ProtectionPolicy(kind=kind),
        population_size=32,
        generations=60,
        master_seed=seed,
        checkpoint_every=0,
        out_dir=str(root / f"{kind}_{seed}"),
    )


@pytest.fixture(scope="module")
def separation_runs(tmp_path_factory):
    """Twenty desk-scale runs: SEP_SEEDS x {dip, none}, run back to back."""
    root = tmp_path_factory.mktemp("separation")
    t0 = time.perf_counter()
    out = {"dip": [], "none": []}
    for kind in ("dip", "none"):
        for seed in SEP_SEEDS:
            summary = run_experiment(separation_cfg(kind, seed, root))
            gen_rows = [r for r in read_log(summary["log"]) if r["type"] == "gen"]
            out[kind].append((seed, summary, gen_rows))
    out["elapsed"] = time.perf_counter() - t0
    return out


def test_criterion_7_treatment_separation(separation_runs):
    dip = separation_runs["dip"]
    none = separation_runs["none"]
    med_dip = statistics.median(s["best_reward"] for _, s, _ in dip)
    med_none = statistics.median(s["best_reward"] for _, s, _ in none)
    solved_dip = sum(1 for _, s, _ in dip if s["solved"])
    solved_none = sum(1 for _, s, _ in none if s["solved"])
    dt = separation_runs["elapsed"]
    ok = med_dip >= med_none and solved_dip >= solved_none and dt < 7200.0
    note(7, "treatment separation", ok,
         f"median best elite dip {med_dip:.1f} vs none {med_none:.1f}; solved "
         f"{solved_dip}/10 vs {solved_none}/10 at mean survival > 107.1 over 20 "
         f"rollouts; seeds {SEP_SEEDS[0]}..{SEP_SEEDS[-1]}, N=32 x 60 generations "
         f"({dt:.0f}s)")
    assert ok


# 8 -----------------------------------------------------------------------


def test_criterion_8_saliency():
    t0 = time.perf_counter()
    env = EnvConfig(kind="dodge", image_size=8, max_steps=40)
    rng = np.random.default_rng(88)
    for i in range(50):
        g = make_genome(TOY, 9000 + i)
        flat = np.full((8, 8, 3), float(rng.uniform(0.0, 1.0)))
        assert np.all(analysis.saliency_map(g, flat, stride=4) == 0.0)

        muted = Genome(visual=g.visual, memory=g.memory,
                       controller=np.zeros(count_params(TOY, "controller")),
                       arch=TOY)
        _, obs = env_reset(env, i)
        assert np.all(analysis.saliency_map(muted, obs, stride=4) == 0.0)

        # two-pass oracle: recompute sampled cells from first principles
        sal = analysis.saliency_map(g, obs, patch=3)
        policy = agent.Policy(g)
        state = agent.initial_state(TOY)
        base = policy.step(state, obs)[1]
        blurred = gaussian_filter(obs, sigma=(1.0, 1.0, 0.0))
        for _ in range(3):
            r, c = int(rng.integers(8)), int(rng.integers(8))
            pert = obs.copy()
            r0, r1 = max(0, r - 1), min(8, r + 2)
            c0, c1 = max(0, c - 1), min(8, c + 2)
            pert[r0:r1, c0:c1] = blurred[r0:r1, c0:c1]
            assert sal[r, c] == np.abs(policy.step(state, pert)[1] - base).sum()
    dt = time.perf_counter() - t0
    ok = dt < 60.0
    note(8, "saliency zero cases and oracle", ok,
         f"uniform-frame and zero-controller maps all zero; two-pass oracle "
         f"exact on 50 random toy genomes ({dt:.2f}s)")
    assert ok


# 9 -----------------------------------------------------------------------


def test_criterion_9_reward_age_direction(separation_runs):
    rows = [r for _, _, gen_rows in separation_runs["dip"] for r in gen_rows]
    stats = analysis.reward_age_stats(rows)
    rho = analysis.reward_age_correlation(stats)
    ok = rho > 0.0
    note(9, "reward-age direction", ok,
         f"spearman rho {rho:.3f} over {len(stats)} age buckets pooled from the "
         f"ten dip runs of criterion 7")
    assert ok
