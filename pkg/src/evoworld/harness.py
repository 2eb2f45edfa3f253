"""Experiment harness: run configuration, evaluation, logging, checkpoints.

A run is fully described by a RunConfig and is deterministic given its
master seed: every random stream the run consumes (weight init, mutation,
age draws, episode seeds) is derived from (master_seed, generation, role,
index), never from shared drawing order.  That makes results independent
of evaluator worker count and lets a resumed run reproduce the uninterrupted
one exactly, up to wall-clock fields.

On disk a run directory contains:

    run.jsonl           one header line, one line per generation, one final line
    checkpoint.evoc     latest checksummed population snapshot
    elites/manifest.jsonl   one line per strict improvement of the best elite
    elites/gen_NNNNN.genome snapshot files named by generation
    elites/best.genome      copy of the last snapshot, written at the end
"""

from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing
import os
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from evoworld import __version__, agent
from evoworld.envs import EnvConfig, solved_check
from evoworld.errors import (
    ConfigError,
    CorruptCheckpointError,
    StartupError,
)
from evoworld.genome import (
    ArchitectureConfig,
    Genome,
    deserialize_genome,
    genome_id,
    init_genome,
    save_genome,
    serialize_genome,
)
from evoworld.moea import (
    Individual,
    Population,
    ProtectionPolicy,
    StepReport,
    generation_step,
    rank_population,
)
from evoworld.nn import backend_name
from evoworld.rng import RandomSource

log = logging.getLogger("evoworld.harness")

CHECKPOINT_MAGIC = b"EVOWCKPT"
CHECKPOINT_VERSION = 1

# dropped before hashing a log; these vary run to run without changing results
VOLATILE_ROW_KEYS = ("wall_ms",)
VOLATILE_CONFIG_KEYS = ("workers", "out_dir", "checkpoint_every")


@dataclass(frozen=True)
class RunConfig:
    arch: ArchitectureConfig = field(default_factory=ArchitectureConfig.desk_scale)
    env: EnvConfig = field(default_factory=EnvConfig.dodge_desk)
    policy: ProtectionPolicy = field(default_factory=ProtectionPolicy)
    population_size: int = 200
    generations: int = 200
    sigma: float = 0.03
    rollouts_per_eval: int = 1
    elite_top_k: int = 3
    master_seed: int = 0
    workers: int = 1
    out_dir: str = "runs/default"
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigError(f"population_size must be >= 2, got {self.population_size}")
        if self.generations < 0:
            raise ConfigError(f"generations must be >= 0, got {self.generations}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.rollouts_per_eval < 1:
            raise ConfigError("rollouts_per_eval must be >= 1")
        if self.elite_top_k < 0:
            raise ConfigError("elite_top_k must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.arch.action_dim != self.env.action_dim:
            raise ConfigError(
                f"architecture emits {self.arch.action_dim}-dim actions but env "
                f"{self.env.kind!r} expects {self.env.action_dim}"
            )

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.to_dict(),
            "env": self.env.to_dict(),
            "policy": self.policy.to_dict(),
            "population_size": self.population_size,
            "generations": self.generations,
            "sigma": self.sigma,
            "rollouts_per_eval": self.rollouts_per_eval,
            "elite_top_k": self.elite_top_k,
            "master_seed": self.master_seed,
            "workers": self.workers,
            "out_dir": self.out_dir,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown run config keys: {sorted(extra)}")
        d = dict(d)
        if "arch" in d:
            d["arch"] = ArchitectureConfig.from_dict(d["arch"])
        if "env" in d:
            d["env"] = EnvConfig.from_dict(d["env"])
        if "policy" in d:
            d["policy"] = ProtectionPolicy.from_dict(d["policy"])
        return cls(**d)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read run config {path}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"run config {path} must hold a JSON object")
    return RunConfig.from_dict(raw)


# evaluation ---------------------------------------------------------------


def _worker_eval(args):
    """Evaluate one genome in a worker process; never raises."""
    blob, env_dict, rollouts, seed, stream = args
    try:
        g = deserialize_genome(blob)
        env_cfg = EnvConfig.from_dict(env_dict)
        reward = agent.evaluate(g, env_cfg, rollouts, RandomSource(seed, stream))
        return ("ok", float(reward))
    except Exception as e:  # substituted by the parent with the env's floor reward
        return ("fail", f"{type(e).__name__}: {e}")


class Evaluator:
    """Batch genome scorer; all genomes of a generation share episode seeds.

    Shared seeds mean every candidate faces the same episodes, so reward
    differences reflect behavior rather than environment luck.  A genome
    whose evaluation raises is scored at the environment's floor reward and
    the failure is logged, keeping one bad individual from killing a run.
    """

    def __init__(self, env_cfg: EnvConfig, rollouts_per_eval: int,
                 master: RandomSource, workers: int = 1):
        self.env_cfg = env_cfg
        self.rollouts = rollouts_per_eval
        self.master = master
        self.workers = workers
        self.failures = 0

    def episode_rng(self, generation: int) -> RandomSource:
        return self.master.derive("episodes", generation)

    def __call__(self, genomes, generation: int):
        rng = self.episode_rng(generation)
        if self.workers > 1 and len(genomes) > 1:
            outcomes = self._parallel(genomes, rng)
        else:
            outcomes = [self._one(g, rng) for g in genomes]
        rewards = []
        for i, (status, value) in enumerate(outcomes):
            if status == "ok":
                rewards.append(value)
            else:
                self.failures += 1
                log.warning("evaluation of genome %d failed (%s); assigning floor reward", i, value)
                rewards.append(self.env_cfg.min_reward)
        return rewards

    def _one(self, genome: Genome, rng: RandomSource):
        try:
            return ("ok", agent.evaluate(genome, self.env_cfg, self.rollouts, rng))
        except Exception as e:
            return ("fail", f"{type(e).__name__}: {e}")

    def _parallel(self, genomes, rng: RandomSource):
        env_dict = self.env_cfg.to_dict()
        jobs = [
            (serialize_genome(g), env_dict, self.rollouts, rng.seed, rng.stream)
            for g in genomes
        ]
        methods = multiprocessing.get_all_start_methods()
        ctx = multiprocessing.get_context("fork" if "fork" in methods else None)
        with ctx.Pool(processes=min(self.workers, len(genomes))) as pool:
            return pool.map(_worker_eval, jobs)


def reevaluate_elites(pop: Population, k: int, env_cfg: EnvConfig,
                      rollouts: int, rng: RandomSource) -> list:
    """Re-test the top-k by reward on fresh episodes; average old and new.

    Damps lucky one-off scores so the archive tracks genuinely strong
    genomes.  Returns the re-tested individuals, best first.
    """
    if k <= 0:
        return []
    ranked = sorted(pop.members, key=lambda m: (-m.reward, m.id))
    elites = ranked[:k]
    for member in elites:
        fresh = agent.evaluate(member.genome, env_cfg, rollouts,
                               rng.derive("member", member.id))
        member.reward = 0.5 * (member.reward + fresh)
    return sorted(elites, key=lambda m: (-m.reward, m.id))


# run log ------------------------------------------------------------------


def _age_tables(members) -> tuple:
    hist = {}
    reward_sum = {}
    for m in members:
        key = str(m.age)
        hist[key] = hist.get(key, 0) + 1
        reward_sum[key] = reward_sum.get(key, 0.0) + m.reward
    return hist, reward_sum


def _gen_row(pop: Population, report: StepReport | None, wall_ms: float) -> dict:
    rewards = np.array([m.reward for m in pop.members])
    ages = np.array([m.age for m in pop.members])
    best = max(pop.members, key=lambda m: (m.reward, -m.id))
    hist, reward_sum = _age_tables(pop.members)
    row = {
        "type": "gen",
        "gen": pop.generation,
        "best_reward": float(rewards.max()),
        "mean_reward": float(rewards.mean()),
        "median_reward": float(np.median(rewards)),
        "best_id": best.id,
        "best_age": int(best.age),
        "mean_age": float(ages.mean()),
        "age_hist": hist,
        "age_reward_sum": reward_sum,
        "resets": dict(report.resets) if report else {},
        "mutations": dict(report.mutations) if report else {},
        "wall_ms": wall_ms,
    }
    return row


def read_log(path) -> list:
    """Parse a run log; raises ConfigError on malformed lines or shape."""
    rows = []
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read run log {path}: {e}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{lineno}: not valid JSON ({e})") from None
        if not isinstance(row, dict) or "type" not in row:
            raise ConfigError(f"{path}:{lineno}: log rows must be objects with a 'type'")
        rows.append(row)
    if rows and rows[0]["type"] != "header":
        raise ConfigError(f"{path}: first row must be the header")
    return rows


def canonical_rows(rows) -> list:
    """Deep-copied rows with volatile fields removed, for hashing."""
    out = json.loads(json.dumps(rows))
    for row in out:
        for key in VOLATILE_ROW_KEYS:
            row.pop(key, None)
        if row.get("type") == "header" and isinstance(row.get("config"), dict):
            for key in VOLATILE_CONFIG_KEYS:
                row["config"].pop(key, None)
    return out


def log_digest(rows) -> str:
    """Hex digest of the canonical content of a run log."""
    blob = json.dumps(canonical_rows(rows), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# checkpoints --------------------------------------------------------------


def save_checkpoint(path, cfg: RunConfig, pop: Population,
                    best_so_far: float | None) -> None:
    """Atomic, checksummed single-file snapshot of the evaluated population."""
    header = {
        "config": cfg.to_dict(),
        "generation": pop.generation,
        "next_id": pop.next_id,
        "best_so_far": best_so_far,
        "members": [
            {"id": m.id, "age": m.age, "reward": m.reward, "parent_id": m.parent_id}
            for m in pop.members
        ],
    }
    head = json.dumps(header, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<IQ", CHECKPOINT_VERSION, len(head)), head]
    for m in pop.members:
        blob = serialize_genome(m.genome)
        parts.append(struct.pack("<Q", len(blob)))
        parts.append(blob)
    body = b"".join(parts)
    data = body + struct.pack("<I", zlib.crc32(body))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (config, population, best_so_far) or raises CorruptCheckpointError."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CorruptCheckpointError(f"cannot read checkpoint {path}: {e}") from None

    def bad(msg):
        raise CorruptCheckpointError(f"checkpoint {path}: {msg}")

    if len(data) < len(CHECKPOINT_MAGIC) + 16:
        bad("truncated before header")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        bad("bad magic bytes")
    body, (stored_crc,) = data[:-4], struct.unpack("<I", data[-4:])
    actual_crc = zlib.crc32(body)
    if actual_crc != stored_crc:
        bad(f"checksum mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})")
    off = len(CHECKPOINT_MAGIC)
    version, head_len = struct.unpack_from("<IQ", body, off)
    off += 12
    if version != CHECKPOINT_VERSION:
        bad(f"unsupported version {version}")
    if off + head_len > len(body):
        bad("truncated header")
    try:
        header = json.loads(body[off : off + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        bad(f"unreadable header ({e})")
    off += head_len
    try:
        cfg = RunConfig.from_dict(header["config"])
        meta = header["members"]
        generation = header["generation"]
        next_id = header["next_id"]
        best_so_far = header["best_so_far"]
    except (KeyError, TypeError, ConfigError) as e:
        bad(f"invalid header fields ({e})")
    members = []
    for entry in meta:
        if off + 8 > len(body):
            bad("truncated genome table")
        (blob_len,) = struct.unpack_from("<Q", body, off)
        off += 8
        if off + blob_len > len(body):
            bad("truncated genome blob")
        genome = deserialize_genome(body[off : off + blob_len], expect_arch=cfg.arch)
        off += blob_len
        members.append(
            Individual(genome=genome, id=entry["id"], age=entry["age"],
                       reward=entry["reward"], parent_id=entry.get("parent_id"))
        )
    if off != len(body):
        bad(f"{len(body) - off} trailing bytes after last genome")
    pop = Population(members=members, generation=generation, next_id=next_id)
    return cfg, pop, best_so_far


# elite archive ------------------------------------------------------------


class EliteArchive:
    """Append-only record of strict improvements of the best elite reward."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir / "elites"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = self.dir / "manifest.jsonl"
        self._last_file = None

    def load_manifest(self) -> list:
        if not self.manifest.exists():
            return []
        rows = []
        for line in self.manifest.read_text().splitlines():
            if line.strip():
                rows.append(json.loads(line))
        return rows

    def truncate_after(self, generation: int) -> None:
        """Keep only entries at or before `generation` (used on resume)."""
        rows = [r for r in self.load_manifest() if r["gen"] <= generation]
        with self.manifest.open("w") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        self._last_file = rows[-1]["file"] if rows else None

    def record(self, generation: int, member: Individual, mean_age: float) -> None:
        name = f"gen_{generation:05d}.genome"
        save_genome(member.genome, self.dir / name)
        row = {
            "gen": generation,
            "id": member.id,
            "age": member.age,
            "mean_age": mean_age,
            "reward": member.reward,
            "genome_id": genome_id(member.genome),
            "file": name,
        }
        with self.manifest.open("a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
        self._last_file = name

    def finalize(self) -> None:
        if self._last_file is not None:
            best = (self.dir / self._last_file).read_bytes()
            (self.dir / "best.genome").write_bytes(best)


# the run loop -------------------------------------------------------------


def _configs_compatible(stored: RunConfig, requested: RunConfig) -> bool:
    """True when the configs define the same experiment.

    Execution details (workers, paths, checkpoint cadence) and the target
    generation count may differ; resume extends a run, so asking for more
    generations than the checkpointed config is the normal case.
    """
    skip = set(VOLATILE_CONFIG_KEYS) | {"generations"}
    a = {k: v for k, v in stored.to_dict().items() if k not in skip}
    b = {k: v for k, v in requested.to_dict().items() if k not in skip}
    return a == b


def _prepare_out_dir(out_dir: str) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("ok")
        probe.unlink()
    except OSError as e:
        raise StartupError(f"output directory {out_dir!r} is not writable: {e}") from None
    return out


def _header_row(cfg: RunConfig) -> dict:
    return {
        "type": "header",
        "format": "evoworld-run-log",
        "log_version": 1,
        "package_version": __version__,
        "backend": backend_name(),
        "config": cfg.to_dict(),
    }


def _init_population(cfg: RunConfig, master: RandomSource) -> Population:
    members = [
        Individual(genome=init_genome(cfg.arch, master.derive("init", i)), id=i)
        for i in range(cfg.population_size)
    ]
    return Population(members=members, generation=0)


def run_experiment(cfg: RunConfig, resume: bool = False) -> dict:
    """Execute (or resume) a full evolution run; returns a summary dict."""
    out = _prepare_out_dir(cfg.out_dir)
    log_path = out / "run.jsonl"
    ckpt_path = out / "checkpoint.evoc"
    master = RandomSource(cfg.master_seed)
    evaluator = Evaluator(cfg.env, cfg.rollouts_per_eval, master, workers=cfg.workers)
    archive = EliteArchive(out)

    if cfg.generations == 0:
        with log_path.open("w") as fh:
            fh.write(json.dumps(_header_row(cfg), sort_keys=True) + "\n")
        return {"generations_run": 0, "best_reward": None, "solved": None,
                "log": str(log_path)}

    if resume:
        stored_cfg, pop, best_so_far = load_checkpoint(ckpt_path)
        if not _configs_compatible(stored_cfg, cfg):
            raise ConfigError(
                "checkpoint config does not match the requested run config"
            )
        start_gen = pop.generation
        if start_gen > cfg.generations:
            raise ConfigError(
                f"checkpoint is at generation {start_gen}, past the requested "
                f"{cfg.generations}; resume can only extend forward"
            )
        rows = read_log(log_path) if log_path.exists() else []
        kept = [r for r in rows if r["type"] == "gen" and r["gen"] <= start_gen]
        with log_path.open("w") as fh:
            fh.write(json.dumps(_header_row(cfg), sort_keys=True) + "\n")
            for r in kept:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        archive.truncate_after(start_gen)
        rank_population(pop.members, reward_only=cfg.policy.reward_only)
        log.info("resuming %s at generation %d", cfg.out_dir, start_gen)
    else:
        start_gen = 0
        best_so_far = None
        with log_path.open("w") as fh:
            fh.write(json.dumps(_header_row(cfg), sort_keys=True) + "\n")
        archive.truncate_after(-1)

        t0 = time.perf_counter()
        pop = _init_population(cfg, master)
        genomes = [m.genome for m in pop.members]
        for member, reward in zip(pop.members, evaluator(genomes, 0)):
            member.reward = float(reward)
        rank_population(pop.members, reward_only=cfg.policy.reward_only)
        elites = reevaluate_elites(pop, cfg.elite_top_k, cfg.env,
                                   cfg.rollouts_per_eval, master.derive("reeval", 0))
        best_so_far = _note_progress(archive, pop, elites, best_so_far)
        _append_row(log_path, _gen_row(pop, None, (time.perf_counter() - t0) * 1e3))
        _maybe_checkpoint(cfg, ckpt_path, pop, best_so_far, 0)

    for g in range(start_gen + 1, cfg.generations + 1):
        t0 = time.perf_counter()
        pop, report = generation_step(
            pop, cfg.policy, evaluator, cfg.sigma, master.derive("gen", g)
        )
        elites = reevaluate_elites(pop, cfg.elite_top_k, cfg.env,
                                   cfg.rollouts_per_eval, master.derive("reeval", g))
        best_so_far = _note_progress(archive, pop, elites, best_so_far)
        _append_row(log_path, _gen_row(pop, report, (time.perf_counter() - t0) * 1e3))
        _maybe_checkpoint(cfg, ckpt_path, pop, best_so_far, g)

    save_checkpoint(ckpt_path, cfg, pop, best_so_far)
    archive.finalize()

    solved, solved_mean = _final_solved_check(cfg, archive, master)
    final = {
        "type": "final",
        "generations_run": cfg.generations,
        "best_reward": best_so_far,
        "solved": solved,
        "solved_mean": solved_mean,
        "eval_failures": evaluator.failures,
    }
    _append_row(log_path, final)
    return {
        "generations_run": cfg.generations,
        "best_reward": best_so_far,
        "solved": solved,
        "solved_mean": solved_mean,
        "log": str(log_path),
    }


def _append_row(log_path: Path, row: dict) -> None:
    with log_path.open("a") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")


def _note_progress(archive: EliteArchive, pop: Population, elites,
                   best_so_far: float | None) -> float | None:
    """Archive the generation's best elite if it strictly improves the run."""
    if not elites:
        best = max(pop.members, key=lambda m: (m.reward, -m.id))
    else:
        best = elites[0]
    if best_so_far is None or best.reward > best_so_far:
        mean_age = float(np.mean([m.age for m in pop.members]))
        archive.record(pop.generation, best, mean_age)
        return best.reward
    return best_so_far


def _maybe_checkpoint(cfg: RunConfig, path, pop, best_so_far, g: int) -> None:
    if cfg.checkpoint_every and g % cfg.checkpoint_every == 0:
        save_checkpoint(path, cfg, pop, best_so_far)


def _final_solved_check(cfg: RunConfig, archive: EliteArchive, master: RandomSource):
    """Score the best archived genome against the env's solution criterion."""
    best_path = archive.dir / "best.genome"
    if not best_path.exists():
        return None, None
    from evoworld.genome import load_genome

    genome = load_genome(best_path, expect_arch=cfg.arch)
    threshold, rollouts = cfg.env.solved_params()
    rng = master.derive("solved")
    policy = agent.Policy(genome)
    scores = [
        agent.rollout(genome, cfg.env, rng.seq_seed(i), policy=policy).total_reward
        for i in range(rollouts)
    ]
    return solved_check(scores, cfg.env), float(np.mean(scores))
