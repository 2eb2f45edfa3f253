"""Post-hoc inspection tools: saliency, activations, distances, age stats.

Everything here is read-only with respect to runs; functions take genomes,
traces, or run directories produced by the harness and emit arrays or small
CSV/PNG artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from evoworld.agent import AgentState, Policy, initial_state
from evoworld.errors import ConfigError
from evoworld.genome import COMPONENTS, Genome, load_genome, weight_distance


def saliency_map(genome: Genome, obs: np.ndarray, state: AgentState | None = None,
                 patch: int = 5, stride: int = 1,
                 sigma: float | None = None) -> np.ndarray:
    """Perturbation saliency of the action with respect to one frame.

    Each location gets the L1 change in the controller's action when a
    patch x patch neighborhood is replaced by its Gaussian-blurred version
    (sigma defaults to patch / 3), holding the incoming recurrent state
    fixed.  With stride > 1 the measured value is block-filled so the
    output is always (H, W).
    """
    if patch < 1 or stride < 1:
        raise ConfigError("patch and stride must be >= 1")
    if obs.ndim != 3 or obs.shape[2] != 3:
        raise ConfigError(f"expected an (H, W, 3) observation, got {obs.shape}")
    if patch > min(obs.shape[0], obs.shape[1]):
        raise ConfigError(
            f"blur patch {patch} exceeds the {obs.shape[0]}x{obs.shape[1]} image"
        )
    if sigma is None:
        sigma = patch / 3.0
    height, width = obs.shape[:2]
    sal = np.zeros((height, width))
    if np.all(obs == obs[:1, :1, :]):
        # blur never mixes channels, so a spatially flat frame is a fixed
        # point of the perturbation and the whole map vanishes
        return sal
    policy = Policy(genome)
    if state is None:
        state = initial_state(genome.arch)
    base = policy.step(state, obs)[1]
    blurred = gaussian_filter(obs, sigma=(sigma, sigma, 0.0))
    half = patch // 2
    for i in range(0, height, stride):
        for j in range(0, width, stride):
            r0, r1 = max(0, i - half), min(height, i + half + 1)
            c0, c1 = max(0, j - half), min(width, j + half + 1)
            if np.array_equal(obs[r0:r1, c0:c1], blurred[r0:r1, c0:c1]):
                # blur left the patch untouched (e.g. a flat region up to
                # rounding), so the perturbed pass would repeat the clean one
                continue
            pert = obs.copy()
            pert[r0:r1, c0:c1] = blurred[r0:r1, c0:c1]
            perturbed = policy.step(state, pert)[1]
            sal[i : i + stride, j : j + stride] = np.abs(perturbed - base).sum()
    return sal


def activation_variance(h_trace: np.ndarray) -> np.ndarray:
    """Per-frame deviation of the mean hidden activation, scaled to [0, 1].

    With x_t the mean activation at frame t and X the episode mean of the
    x_t, the raw score is (X - x_t)^2; the returned curve is min-max
    normalized, or all zeros when the trace is constant.
    """
    h = np.asarray(h_trace, dtype=float)
    if h.ndim != 2:
        raise ConfigError(f"expected an (T, hidden) activation trace, got {h.shape}")
    if h.shape[0] == 0:
        return np.zeros(0)
    per_frame = h.mean(axis=1)
    episode_mean = per_frame.mean()
    raw = (episode_mean - per_frame) ** 2
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def distance_trajectory(run_dir) -> list:
    """Weight distance from every archived elite to the final best genome.

    Reads elites/manifest.jsonl of a finished run; each returned row holds
    the generation, the elite's age and reward, and the Euclidean distance
    per component to the run's best.genome.
    """
    elites = Path(run_dir) / "elites"
    manifest = elites / "manifest.jsonl"
    best_path = elites / "best.genome"
    if not manifest.exists() or not best_path.exists():
        raise ConfigError(f"{run_dir} has no finished elite archive")
    final = load_genome(best_path)
    rows = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        g = load_genome(elites / entry["file"], expect_arch=final.arch)
        row = {
            "gen": entry["gen"],
            "age": entry["age"],
            "mean_age": entry.get("mean_age", 0.0),
            "reward": entry["reward"],
        }
        for comp in COMPONENTS:
            row[comp] = weight_distance(g, final, comp)
        rows.append(row)
    return rows


def write_distances_csv(rows: list, path) -> None:
    cols = ["gen", "age", "mean_age", "reward", *COMPONENTS]
    lines = ["# elite distance trajectory", ",".join(cols)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


def reward_age_stats(log_rows: list) -> list:
    """Pooled (age, population count, mean reward) over a run log's rows.

    Accepts the parsed rows of one or more run logs; generation rows carry
    an age histogram and the summed reward per age bucket, which pool
    additively across generations and runs.
    """
    hist = {}
    total = {}
    for row in log_rows:
        if row.get("type") != "gen":
            continue
        for key, n in row["age_hist"].items():
            age = int(key)
            hist[age] = hist.get(age, 0) + int(n)
            total[age] = total.get(age, 0.0) + float(row["age_reward_sum"][key])
    return [
        {"age": age, "count": hist[age], "mean_reward": total[age] / hist[age]}
        for age in sorted(hist)
    ]


def reward_age_correlation(stats: list) -> float:
    """Spearman rank correlation between age bucket and its mean reward."""
    from scipy.stats import spearmanr

    if len(stats) < 2:
        raise ConfigError("need at least two age buckets for a correlation")
    ages = [s["age"] for s in stats]
    rewards = [s["mean_reward"] for s in stats]
    rho = spearmanr(ages, rewards).statistic
    return float(rho)


def write_reward_age_csv(stats: list, path) -> None:
    lines = ["# pooled reward by individual age", "age,count,mean_reward"]
    for s in stats:
        lines.append(f"{s['age']},{s['count']},{_fmt(s['mean_reward'])}")
    Path(path).write_text("\n".join(lines) + "\n")


def dump_vectors(genome: Genome, env_cfg, episode_seed: int, path):
    """Roll one episode and write per-frame z/h/action/reward vectors.

    The CSV opens with '#' header lines naming the architecture, the
    genome id, and the episode seed, so a dump can be traced back to what
    produced it.  Returns the trace for further use.
    """
    from evoworld.agent import rollout
    from evoworld.genome import genome_id

    result, trace = rollout(genome, env_cfg, episode_seed, record_trace=True)
    arch = genome.arch
    header = [
        f"# arch: image={arch.image_size} z={arch.z_dim} "
        f"hidden={arch.hidden_dim} actions={arch.action_dim}",
        f"# genome: {genome_id(genome)}  env: {env_cfg.kind}  seed: {episode_seed}",
        f"# steps: {trace.steps}  total_reward: {_fmt(result.total_reward)}",
    ]
    write_trace_csv(trace, path, header)
    return trace


def write_trace_csv(trace, path, header_lines=()) -> None:
    """Per-frame CSV of the latent, hidden state, action, and reward."""
    z_dim = trace.z.shape[1]
    h_dim = trace.h.shape[1]
    a_dim = trace.actions.shape[1]
    cols = (
        [f"z{i}" for i in range(z_dim)]
        + [f"h{i}" for i in range(h_dim)]
        + [f"a{i}" for i in range(a_dim)]
        + ["reward"]
    )
    lines = list(header_lines) + [",".join(cols)]
    for t in range(trace.steps):
        vals = np.concatenate([trace.z[t], trace.h[t], trace.actions[t],
                               [trace.rewards[t]]])
        lines.append(",".join(_fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_saliency_csv(sal: np.ndarray, path) -> None:
    lines = [f"# saliency map {sal.shape[0]}x{sal.shape[1]}"]
    for row in sal:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_saliency_png(sal: np.ndarray, path, scale: int = 8) -> None:
    """Grayscale PNG of the normalized map, upscaled for visibility."""
    from PIL import Image

    hi = sal.max()
    norm = sal / hi if hi > 0 else sal
    img = (norm * 255).astype(np.uint8)
    im = Image.fromarray(img, mode="L")
    im = im.resize((img.shape[1] * scale, img.shape[0] * scale), Image.NEAREST)
    im.save(path)


def render_frame_png(obs: np.ndarray, path, scale: int = 8) -> None:
    """RGB PNG of one observation frame, upscaled for visibility."""
    from PIL import Image

    img = (np.clip(obs, 0.0, 1.0) * 255).astype(np.uint8)
    im = Image.fromarray(img, mode="RGB")
    im = im.resize((img.shape[1] * scale, img.shape[0] * scale), Image.NEAREST)
    im.save(path)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")
