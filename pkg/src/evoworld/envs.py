"""Built-in pixel environments behind one functional episode interface.

DodgeWorld: the agent sits on the bottom row of a cell grid and strafes
left/right to avoid projectiles falling from the top; +1 reward per frame
survived, death on impact.  TrackWorld: a kinematic point-car collects
reward by visiting the tiles of a procedurally generated track (-0.1 per
frame, +100/N per first visit to each of the N tiles).

State transitions are pure: step(cfg, state, action) returns a fresh state
and never mutates its argument, so (cfg, episode seed, action sequence)
fully determines every frame and reward.  Observations are float64 RGB
arrays of shape (image_size, image_size, 3) with values in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from evoworld.errors import ConfigError, LogicError

ENV_KINDS = ("dodge", "track")

# render palette, RGB in [0,1]
DODGE_BACKGROUND = (0.05, 0.05, 0.08)
DODGE_WALL = (0.45, 0.28, 0.12)
DODGE_AGENT = (0.15, 0.85, 0.20)
DODGE_PROJECTILE = (1.00, 0.55, 0.10)
TRACK_GRASS = (0.10, 0.50, 0.12)
TRACK_ROAD = (0.48, 0.48, 0.48)
TRACK_CAR = (0.90, 0.10, 0.10)
TRACK_NOSE = (1.00, 0.60, 0.60)


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "dodge"
    image_size: int = 16
    max_steps: int = 300
    # dodge
    spawn_rate: float = 0.25
    homing: float = 0.5
    projectile_speed: int = 1
    action_threshold: float = 0.3
    # track
    n_tiles: int = 24
    track_grid: int = 8
    steer_rate: float = 0.3
    accel: float = 0.06
    brake_gain: float = 0.12
    drag: float = 0.04
    vmax: float = 0.5
    # solved criterion; None means the default for this scale
    solved_threshold: float | None = None
    solved_rollouts: int | None = None

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ConfigError(f"unknown env kind {self.kind!r}; expected one of {ENV_KINDS}")
        if self.image_size < 4:
            raise ConfigError(f"image_size must be >= 4, got {self.image_size}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if not 0.0 <= self.spawn_rate <= 1.0 or not 0.0 <= self.homing <= 1.0:
            raise ConfigError("spawn_rate and homing must lie in [0, 1]")
        if self.projectile_speed < 1:
            raise ConfigError("projectile_speed must be >= 1")
        if self.kind == "track":
            if self.n_tiles < 2 or self.track_grid < 2:
                raise ConfigError("track needs n_tiles >= 2 and track_grid >= 2")
            if self.n_tiles > self.track_grid**2:
                raise ConfigError(
                    f"n_tiles={self.n_tiles} cannot fit a {self.track_grid}x{self.track_grid} grid"
                )
            if self.image_size < self.track_grid:
                raise ConfigError("image_size must be >= track_grid")

    @classmethod
    def dodge_desk(cls, **kw) -> "EnvConfig":
        return cls(kind="dodge", image_size=16, max_steps=300, **kw)

    @classmethod
    def dodge_full(cls, **kw) -> "EnvConfig":
        return cls(kind="dodge", image_size=64, max_steps=2100, **kw)

    @classmethod
    def track_desk(cls, **kw) -> "EnvConfig":
        return cls(kind="track", image_size=16, max_steps=300, **kw)

    @classmethod
    def track_full(cls, **kw) -> "EnvConfig":
        return cls(kind="track", image_size=64, max_steps=1000, n_tiles=48,
                   track_grid=16, **kw)

    @property
    def action_dim(self) -> int:
        return 1 if self.kind == "dodge" else 3

    @property
    def min_reward(self) -> float:
        """Worst achievable episode total; substituted on evaluator failure."""
        return 0.0 if self.kind == "dodge" else -0.1 * self.max_steps

    def solved_params(self) -> tuple:
        """(mean-score threshold, rollout count) defining a solution."""
        if self.solved_threshold is not None:
            threshold = self.solved_threshold
        elif self.kind == "dodge" and self.max_steps == 2100:
            threshold = 750.0
        else:
            threshold = 0.357 * self.max_steps
        rollouts = self.solved_rollouts
        if rollouts is None:
            rollouts = 100 if self.max_steps >= 2100 else 20
        return threshold, rollouts

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "image_size": self.image_size,
            "max_steps": self.max_steps,
            "spawn_rate": self.spawn_rate,
            "homing": self.homing,
            "projectile_speed": self.projectile_speed,
            "action_threshold": self.action_threshold,
            "n_tiles": self.n_tiles,
            "track_grid": self.track_grid,
            "steer_rate": self.steer_rate,
            "accel": self.accel,
            "brake_gain": self.brake_gain,
            "drag": self.drag,
            "vmax": self.vmax,
            "solved_threshold": self.solved_threshold,
            "solved_rollouts": self.solved_rollouts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown env keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class EpisodeResult:
    total_reward: float
    steps_survived: int
    terminated_early: bool


# DodgeWorld ---------------------------------------------------------------


@dataclass(frozen=True)
class DodgeState:
    t: int
    agent_col: int
    projectiles: tuple  # ((row, col), ...)
    rng_state: tuple  # frozen PCG64 state words
    done: bool = False
    steps_survived: int = 0


def _pack_rng(gen: np.random.Generator) -> tuple:
    s = gen.bit_generator.state
    return (s["state"]["state"], s["state"]["inc"], s["has_uint32"], s["uinteger"])


def _unpack_rng(packed: tuple) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": packed[0], "inc": packed[1]},
        "has_uint32": packed[2],
        "uinteger": packed[3],
    }
    return gen


def _dodge_reset(cfg: EnvConfig, seed: int):
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return DodgeState(
        t=0,
        agent_col=cfg.image_size // 2,
        projectiles=(),
        rng_state=_pack_rng(gen),
    )


def _dodge_step(cfg: EnvConfig, state: DodgeState, action) -> tuple:
    size = cfg.image_size
    bottom = size - 1
    a = float(np.asarray(action).reshape(-1)[0])

    # strafe: threshold the scalar action into {left, still, right}
    col = state.agent_col
    if a < -cfg.action_threshold:
        col = max(1, col - 1)
    elif a > cfg.action_threshold:
        col = min(size - 2, col + 1)

    # advance projectiles; any crossing the bottom row in the agent's
    # column is a hit (speed 1 means exact arrival, >1 still cannot tunnel
    # because the crossing test covers the skipped rows)
    hit = False
    alive = []
    for row, pcol in state.projectiles:
        new_row = row + cfg.projectile_speed
        if new_row >= bottom:
            if pcol == col:
                hit = True
        else:
            alive.append((new_row, pcol))

    if hit:
        return replace(state, agent_col=col, projectiles=tuple(alive), done=True), 0.0, True

    gen = _unpack_rng(state.rng_state)
    if gen.random() < cfg.spawn_rate:
        if gen.random() < cfg.homing:
            spawn_col = col
        else:
            spawn_col = int(gen.integers(1, size - 1))
        alive.append((0, spawn_col))

    t = state.t + 1
    done = t >= cfg.max_steps
    new_state = DodgeState(
        t=t,
        agent_col=col,
        projectiles=tuple(alive),
        rng_state=_pack_rng(gen),
        done=done,
        steps_survived=state.steps_survived + 1,
    )
    return new_state, 1.0, done


def _dodge_render(cfg: EnvConfig, state: DodgeState) -> np.ndarray:
    size = cfg.image_size
    img = np.empty((size, size, 3))
    img[:] = DODGE_BACKGROUND
    img[:, 0] = DODGE_WALL
    img[:, size - 1] = DODGE_WALL
    # agent: 2px-tall block on the bottom row
    img[size - 1, state.agent_col] = DODGE_AGENT
    img[size - 2, state.agent_col] = DODGE_AGENT
    for row, col in state.projectiles:
        if 0 <= row < size:
            img[row, col] = DODGE_PROJECTILE
    return img


# TrackWorld ---------------------------------------------------------------


@dataclass(frozen=True)
class TrackState:
    t: int
    x: float
    y: float
    heading: float
    speed: float
    tiles: tuple  # ((gx, gy), ...) in visit-order along the track
    visited: tuple  # booleans matching tiles
    done: bool = False
    steps_survived: int = 0
    total_tiles_visited: int = 0


def generate_track(seed: int, grid: int, n_tiles: int) -> tuple:
    """Seeded self-avoiding walk of n_tiles connected cells on a grid.

    Retries with sub-seeds when the walk dead-ends, so the result is a
    deterministic function of the arguments.
    """
    for attempt in range(200):
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, attempt))))
        start = (grid // 2, grid // 2)
        tiles = [start]
        seen = {start}
        heading = int(gen.integers(4))
        moves = ((1, 0), (0, 1), (-1, 0), (0, -1))
        while len(tiles) < n_tiles:
            x, y = tiles[-1]
            options = []
            for d, (dx, dy) in enumerate(moves):
                nxt = (x + dx, y + dy)
                if 0 <= nxt[0] < grid and 0 <= nxt[1] < grid and nxt not in seen:
                    options.append((d, nxt))
            if not options:
                break
            straight = [o for o in options if o[0] == heading]
            # bias toward continuing straight, for longer corridors
            if straight and gen.random() < 0.6:
                d, nxt = straight[0]
            else:
                d, nxt = options[int(gen.integers(len(options)))]
            heading = d
            tiles.append(nxt)
            seen.add(nxt)
        if len(tiles) == n_tiles:
            return tuple(tiles)
    raise ConfigError(
        f"could not lay out {n_tiles} tiles on a {grid}x{grid} grid (seed {seed})"
    )


def _track_reset(cfg: EnvConfig, seed: int):
    tiles = generate_track(seed, cfg.track_grid, cfg.n_tiles)
    (x0, y0), (x1, y1) = tiles[0], tiles[1]
    heading = math.atan2(y1 - y0, x1 - x0)
    visited = (True,) + (False,) * (len(tiles) - 1)
    return TrackState(
        t=0,
        x=x0 + 0.5,
        y=y0 + 0.5,
        heading=heading,
        speed=0.0,
        tiles=tiles,
        visited=visited,
        total_tiles_visited=1,
    )


def _track_step(cfg: EnvConfig, state: TrackState, action) -> tuple:
    a = np.asarray(action, dtype=float).reshape(-1)
    if a.shape[0] != 3:
        raise ConfigError(f"track expects a 3-vector action, got length {a.shape[0]}")
    steer = float(np.clip(a[0], -1.0, 1.0))
    throttle = max(float(a[1]), 0.0)
    brake = max(float(a[2]), 0.0)

    heading = state.heading + steer * cfg.steer_rate
    speed = state.speed + cfg.accel * throttle - cfg.brake_gain * brake - cfg.drag * state.speed
    speed = min(max(speed, 0.0), cfg.vmax)
    grid = float(cfg.track_grid)
    x = min(max(state.x + speed * math.cos(heading), 0.0), grid - 1e-9)
    y = min(max(state.y + speed * math.sin(heading), 0.0), grid - 1e-9)

    reward = -0.1
    visited = state.visited
    total = state.total_tiles_visited
    cell = (int(x), int(y))
    if cell in state.tiles:
        idx = state.tiles.index(cell)
        if not visited[idx]:
            visited = visited[:idx] + (True,) + visited[idx + 1 :]
            total += 1
            reward += 100.0 / len(state.tiles)

    t = state.t + 1
    done = t >= cfg.max_steps or total == len(state.tiles)
    new_state = TrackState(
        t=t,
        x=x,
        y=y,
        heading=heading,
        speed=speed,
        tiles=state.tiles,
        visited=visited,
        done=done,
        steps_survived=state.steps_survived + 1,
        total_tiles_visited=total,
    )
    return new_state, reward, done


def _track_render(cfg: EnvConfig, state: TrackState) -> np.ndarray:
    size = cfg.image_size
    px = size // cfg.track_grid
    img = np.empty((size, size, 3))
    img[:] = TRACK_GRASS
    for gx, gy in state.tiles:
        img[gy * px : (gy + 1) * px, gx * px : (gx + 1) * px] = TRACK_ROAD
    # car pixel plus a nose pixel one cell ahead, so heading is visible
    cx = min(int(state.x * px), size - 1)
    cy = min(int(state.y * px), size - 1)
    img[cy, cx] = TRACK_CAR
    nx = int((state.x + 0.6 * math.cos(state.heading)) * px)
    ny = int((state.y + 0.6 * math.sin(state.heading)) * px)
    if 0 <= nx < size and 0 <= ny < size and (nx, ny) != (cx, cy):
        img[ny, nx] = TRACK_NOSE
    return img


# shared interface ---------------------------------------------------------


def env_reset(cfg: EnvConfig, episode_seed: int):
    """Deterministic initial (state, observation) for the episode seed."""
    state = _dodge_reset(cfg, episode_seed) if cfg.kind == "dodge" else _track_reset(cfg, episode_seed)
    return state, render(cfg, state)


def env_step(cfg: EnvConfig, state, action):
    """Advance one frame; returns (state, observation, reward, done)."""
    if state.done:
        raise LogicError("env_step called on a finished episode")
    if cfg.kind == "dodge":
        new_state, reward, done = _dodge_step(cfg, state, action)
    else:
        new_state, reward, done = _track_step(cfg, state, action)
    return new_state, render(cfg, new_state), reward, done


def render(cfg: EnvConfig, state) -> np.ndarray:
    """Pure rasterization of the state; bitwise deterministic."""
    if cfg.kind == "dodge":
        return _dodge_render(cfg, state)
    return _track_render(cfg, state)


class Episode:
    """Mutable convenience wrapper around the functional interface."""

    def __init__(self, cfg: EnvConfig, episode_seed: int):
        self.cfg = cfg
        self.state, self.obs = env_reset(cfg, episode_seed)
        self.total_reward = 0.0

    def step(self, action):
        self.state, self.obs, reward, done = env_step(self.cfg, self.state, action)
        self.total_reward += reward
        return self.obs, reward, done

    @property
    def done(self) -> bool:
        return self.state.done

    def result(self) -> EpisodeResult:
        return EpisodeResult(
            total_reward=self.total_reward,
            steps_survived=self.state.steps_survived,
            terminated_early=self.state.done and self.state.t < self.cfg.max_steps,
        )


def solved_check(scores, cfg: EnvConfig) -> bool:
    """True when the mean score over the configured rollouts beats the bar."""
    threshold, rollouts = cfg.solved_params()
    scores = list(scores)
    if len(scores) != rollouts:
        raise ConfigError(f"solved_check expects {rollouts} scores, got {len(scores)}")
    return float(np.mean(scores)) > threshold
