"""World-model agent: encoder, recurrent memory, and linear controller.

The control loop each frame is

    z_t = mean-head(conv stack(obs_t))
    h_t, c_t = lstm(concat(z_t, a_{t-1}), h_{t-1}, c_{t-1})
    a_t = tanh(W_c concat(z_t, h_t) + b_c)

The mixture-density head on the memory component is carried in the genome
and mutated like everything else, but its output is never consumed while
acting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evoworld import nn
from evoworld.envs import EnvConfig, Episode, EpisodeResult
from evoworld.errors import ConfigError
from evoworld.genome import ArchitectureConfig, Genome, layout


@dataclass(frozen=True)
class AgentState:
    """Recurrent carry between frames; all-zero before the first one."""

    z: np.ndarray
    h: np.ndarray
    c: np.ndarray
    last_action: np.ndarray


def initial_state(arch: ArchitectureConfig) -> AgentState:
    return AgentState(
        z=np.zeros(arch.z_dim),
        h=np.zeros(arch.hidden_dim),
        c=np.zeros(arch.hidden_dim),
        last_action=np.zeros(arch.action_dim),
    )


class Policy:
    """Caches the per-layer weight views of one genome for repeated stepping."""

    def __init__(self, genome: Genome):
        self.genome = genome
        self.arch = genome.arch
        plans = layout(self.arch)
        self._convs = []
        for plan in plans["visual"]:
            view = genome.visual[plan.offset : plan.offset + plan.count]
            if plan.spec.kind == "conv":
                self._convs.append((plan.spec, view))
            elif plan.name == "mean_head":
                self._mean = (plan.spec, view)
        lstm_plan = plans["memory"][0]
        self._lstm_w = genome.memory[lstm_plan.offset : lstm_plan.offset + lstm_plan.count]
        ctrl_plan = plans["controller"][0]
        self._ctrl = (ctrl_plan.spec, genome.controller[: ctrl_plan.count])

    def encode(self, obs: np.ndarray) -> np.ndarray:
        """Observation (H, W, 3) in [0, 1] to the latent mean vector."""
        if obs.ndim != 3 or obs.shape[2] != 3:
            raise ConfigError(f"expected an (H, W, 3) observation, got {obs.shape}")
        x = np.ascontiguousarray(obs.transpose(2, 0, 1))
        for spec, view in self._convs:
            x = nn.conv2d_forward(x, view, spec)
        spec, view = self._mean
        return nn.linear_forward(x.reshape(-1), view, spec)

    def step(self, state: AgentState, obs: np.ndarray):
        """One control frame; returns (new_state, action)."""
        z = self.encode(obs)
        h, c = nn.lstm_cell_forward(
            np.concatenate([z, state.last_action]), state.h, state.c, self._lstm_w
        )
        spec, view = self._ctrl
        action = nn.linear_forward(np.concatenate([z, h]), view, spec)
        return AgentState(z=z, h=h, c=c, last_action=action), action


def agent_step(genome: Genome, state: AgentState, obs: np.ndarray):
    """Single-shot form of Policy.step, for callers without a cached policy."""
    return Policy(genome).step(state, obs)


@dataclass(frozen=True)
class RolloutTrace:
    """Per-frame records of one episode, stacked along axis 0."""

    z: np.ndarray  # (T, z_dim)
    h: np.ndarray  # (T, hidden_dim)
    c: np.ndarray  # (T, hidden_dim)
    actions: np.ndarray  # (T, action_dim)
    rewards: np.ndarray  # (T,)
    obs: np.ndarray | None = None  # (T, H, W, 3) pre-action frames, if recorded

    @property
    def steps(self) -> int:
        return self.rewards.shape[0]


def rollout(
    genome: Genome,
    env_cfg: EnvConfig,
    episode_seed: int,
    record_trace: bool = False,
    record_frames: bool = False,
    policy: Policy | None = None,
):
    """Run one full episode; returns EpisodeResult, or (result, trace)."""
    if genome.arch.action_dim != env_cfg.action_dim:
        raise ConfigError(
            f"genome emits {genome.arch.action_dim}-dim actions but env "
            f"{env_cfg.kind!r} expects {env_cfg.action_dim}"
        )
    if policy is None:
        policy = Policy(genome)
    episode = Episode(env_cfg, episode_seed)
    state = initial_state(genome.arch)
    rows = [] if record_trace else None
    while not episode.done:
        obs = episode.obs
        state, action = policy.step(state, obs)
        _, reward, _ = episode.step(action)
        if rows is not None:
            rows.append((state.z, state.h, state.c, action, reward,
                         obs if record_frames else None))
    result = episode.result()
    if rows is None:
        return result
    # one record per step survived; a terminal hit frame carries no reward
    # and is dropped, so the reward column always sums to the episode total
    rows = rows[: result.steps_survived]
    trace = RolloutTrace(
        z=np.stack([r[0] for r in rows]),
        h=np.stack([r[1] for r in rows]),
        c=np.stack([r[2] for r in rows]),
        actions=np.stack([r[3] for r in rows]),
        rewards=np.array([r[4] for r in rows]),
        obs=np.stack([r[5] for r in rows]) if record_frames else None,
    )
    return result, trace


def evaluate(genome: Genome, env_cfg: EnvConfig, n_rollouts: int, rng) -> float:
    """Mean episode reward over n_rollouts episodes seeded from rng.seq_seed."""
    if n_rollouts < 1:
        raise ConfigError(f"n_rollouts must be >= 1, got {n_rollouts}")
    policy = Policy(genome)
    total = 0.0
    for i in range(n_rollouts):
        result = rollout(genome, env_cfg, rng.seq_seed(i), policy=policy)
        total += result.total_reward
    return total / n_rollouts
