"""Command line entry point.

Subcommands: evolve, replay, analyze, count-params, verify.  Runtime
failures print one line to stderr in the form

    evoworld: error: <category>: <message>

and exit with status 1; argparse usage problems exit with 2.  Two
environment variables act as defaults: EVOWORLD_OUT for the output
directory and EVOWORLD_WORKERS for the evaluator worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from evoworld import __version__
from evoworld.errors import ConfigError, EvoworldError


def _env_default(name, fallback):
    return os.environ.get(name, fallback)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoworld",
        description="Gradient-free evolution of world-model agents on pixel tasks.",
    )
    parser.add_argument("--version", action="version", version=f"evoworld {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("evolve", help="run an evolution experiment")
    ev.add_argument("--config", help="JSON run config; flags below override it")
    ev.add_argument("--env", choices=["dodge", "track"], default=None)
    ev.add_argument("--scale", choices=["desk", "full"], default=None,
                    help="architecture/environment preset pair")
    ev.add_argument("--policy", default=None,
                    choices=["dip", "controller-protect",
                             "memory-and-controller-protect", "random-age", "none"])
    ev.add_argument("--population", type=int, default=None)
    ev.add_argument("--generations", type=int, default=None)
    ev.add_argument("--sigma", type=float, default=None)
    ev.add_argument("--rollouts", type=int, default=None)
    ev.add_argument("--elite-k", type=int, default=None)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--workers", type=int, default=None)
    ev.add_argument("--out", default=None)
    ev.add_argument("--checkpoint-every", type=int, default=None)
    ev.add_argument("--resume", action="store_true",
                    help="continue from the checkpoint in the output directory")

    rp = sub.add_parser("replay", help="re-run a saved genome on one episode")
    rp.add_argument("--genome", help="genome file; defaults to RUN/elites/best.genome")
    rp.add_argument("--run", help="run directory providing config and best genome")
    rp.add_argument("--env", choices=["dodge", "track"], default=None)
    rp.add_argument("--scale", choices=["desk", "full"], default=None)
    rp.add_argument("--seed", type=int, default=0, help="episode seed")
    rp.add_argument("--dump-traces", metavar="CSV",
                    help="write per-frame z/h/action/reward vectors")
    rp.add_argument("--frames-dir", metavar="DIR",
                    help="write every observation as a PNG")

    an = sub.add_parser("analyze", help="inspection tools over runs and genomes")
    ansub = an.add_subparsers(dest="tool", required=True)

    sal = ansub.add_parser("saliency", help="perturbation saliency of one frame")
    _genome_args(sal)
    sal.add_argument("--seed", type=int, default=0)
    sal.add_argument("--frame", type=int, default=0,
                     help="episode frame to analyze")
    sal.add_argument("--patch", type=int, default=5)
    sal.add_argument("--stride", type=int, default=1)
    sal.add_argument("--blur-sigma", type=float, default=None,
                     help="Gaussian blur sigma (default patch/3)")
    sal.add_argument("--out-prefix", default="saliency",
                     help="writes PREFIX.csv, PREFIX.png and PREFIX_frame.png")

    vec = ansub.add_parser("vectors", help="per-frame latent/hidden/action dump")
    _genome_args(vec)
    vec.add_argument("--seed", type=int, default=0)
    vec.add_argument("--out", default="vectors.csv")

    act = ansub.add_parser("activation", help="hidden-activation variance curve")
    _genome_args(act)
    act.add_argument("--seed", type=int, default=0)
    act.add_argument("--out", default="activation.csv")

    dist = ansub.add_parser("distances", help="elite weight drift toward the final best")
    dist.add_argument("--run", required=True)
    dist.add_argument("--out", default="distances.csv")

    ra = ansub.add_parser("reward-age", help="pooled reward by individual age")
    ra.add_argument("--log", nargs="+", required=True, help="run.jsonl file(s)")
    ra.add_argument("--out", default="reward_age.csv")

    cp = sub.add_parser("count-params", help="print exact per-component counts")
    cp.add_argument("--scale", choices=["desk", "full"], default="full")

    vf = sub.add_parser("verify", help="self-check battery")
    vf.add_argument("--update-golden", action="store_true",
                    help="rewrite the stored golden frame checksums first")
    return parser


def _genome_args(p):
    p.add_argument("--genome", help="genome file; defaults to RUN/elites/best.genome")
    p.add_argument("--run", help="run directory providing config and best genome")
    p.add_argument("--env", choices=["dodge", "track"], default=None)
    p.add_argument("--scale", choices=["desk", "full"], default=None)


# evolve -------------------------------------------------------------------


def _presets(env_kind: str, scale: str):
    from evoworld.envs import EnvConfig
    from evoworld.genome import ArchitectureConfig

    if scale == "full":
        arch = ArchitectureConfig.full_scale(action_dim=1 if env_kind == "dodge" else 3)
        env = EnvConfig.dodge_full() if env_kind == "dodge" else EnvConfig.track_full()
    else:
        arch = ArchitectureConfig.desk_scale(action_dim=1 if env_kind == "dodge" else 3)
        env = EnvConfig.dodge_desk() if env_kind == "dodge" else EnvConfig.track_desk()
    return arch, env


def cmd_evolve(args) -> int:
    from evoworld.harness import RunConfig, load_config, run_experiment
    from evoworld.moea import ProtectionPolicy

    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    d = cfg.to_dict()
    if args.env or args.scale:
        env_kind = args.env or cfg.env.kind
        scale = args.scale or ("full" if cfg.env.image_size == 64 else "desk")
        arch, env = _presets(env_kind, scale)
        d["arch"], d["env"] = arch.to_dict(), env.to_dict()
    if args.policy:
        d["policy"] = ProtectionPolicy(kind=args.policy).to_dict()
    overrides = {
        "population_size": args.population,
        "generations": args.generations,
        "sigma": args.sigma,
        "rollouts_per_eval": args.rollouts,
        "elite_top_k": args.elite_k,
        "master_seed": args.seed,
        "checkpoint_every": args.checkpoint_every,
    }
    for key, val in overrides.items():
        if val is not None:
            d[key] = val
    out = args.out or _env_default("EVOWORLD_OUT", None)
    if out is not None:
        d["out_dir"] = out
    workers = args.workers
    if workers is None and os.environ.get("EVOWORLD_WORKERS"):
        try:
            workers = int(os.environ["EVOWORLD_WORKERS"])
        except ValueError:
            raise ConfigError(
                f"EVOWORLD_WORKERS must be an integer, got {os.environ['EVOWORLD_WORKERS']!r}"
            ) from None
    if workers is not None:
        d["workers"] = workers
    cfg = RunConfig.from_dict(d)

    print(json.dumps(cfg.to_dict(), sort_keys=True))
    summary = run_experiment(cfg, resume=args.resume)
    print(json.dumps(summary, sort_keys=True))
    return 0


# replay / analyze ---------------------------------------------------------


def _load_genome_and_env(args):
    from evoworld.envs import EnvConfig
    from evoworld.genome import load_genome
    from evoworld.harness import read_log

    genome_path = args.genome
    env_cfg = None
    if args.run:
        run_dir = Path(args.run)
        if genome_path is None:
            genome_path = run_dir / "elites" / "best.genome"
        rows = read_log(run_dir / "run.jsonl")
        env_cfg = EnvConfig.from_dict(rows[0]["config"]["env"])
    if genome_path is None:
        raise ConfigError("need --genome or --run to locate a genome")
    genome = load_genome(genome_path)
    if args.env or args.scale or env_cfg is None:
        kind = args.env or (env_cfg.kind if env_cfg else "dodge")
        scale = args.scale or ("full" if genome.arch.image_size == 64 else "desk")
        _, env_cfg = _presets(kind, scale)
    if genome.arch.action_dim != env_cfg.action_dim:
        raise ConfigError(
            f"genome action_dim {genome.arch.action_dim} does not fit env "
            f"{env_cfg.kind!r}"
        )
    return genome, env_cfg


def cmd_replay(args) -> int:
    from evoworld import agent, analysis

    genome, env_cfg = _load_genome_and_env(args)
    want_frames = args.frames_dir is not None
    result, trace = agent.rollout(
        genome, env_cfg, args.seed, record_trace=True, record_frames=want_frames
    )
    if args.dump_traces:
        analysis.dump_vectors(genome, env_cfg, args.seed, args.dump_traces)
    if want_frames:
        frames = Path(args.frames_dir)
        frames.mkdir(parents=True, exist_ok=True)
        for t in range(trace.steps):
            analysis.render_frame_png(trace.obs[t], frames / f"frame_{t:05d}.png")
    print(json.dumps({
        "seed": args.seed,
        "total_reward": result.total_reward,
        "steps_survived": result.steps_survived,
        "terminated_early": result.terminated_early,
    }, sort_keys=True))
    return 0


def cmd_analyze(args) -> int:
    from evoworld import agent, analysis
    from evoworld.harness import read_log

    if args.tool == "saliency":
        from evoworld.envs import Episode

        genome, env_cfg = _load_genome_and_env(args)
        episode = Episode(env_cfg, args.seed)
        state = agent.initial_state(genome.arch)
        policy = agent.Policy(genome)
        for _ in range(args.frame):
            if episode.done:
                raise ConfigError(
                    f"episode ended before frame {args.frame} (seed {args.seed})"
                )
            state, action = policy.step(state, episode.obs)
            episode.step(action)
        sal = analysis.saliency_map(genome, episode.obs, state,
                                    patch=args.patch, stride=args.stride,
                                    sigma=args.blur_sigma)
        analysis.write_saliency_csv(sal, f"{args.out_prefix}.csv")
        analysis.write_saliency_png(sal, f"{args.out_prefix}.png")
        analysis.render_frame_png(episode.obs, f"{args.out_prefix}_frame.png")
        print(f"saliency written to {args.out_prefix}.csv / .png "
              f"(frame {args.frame}, max {sal.max():.6g})")
    elif args.tool in ("vectors", "activation"):
        genome, env_cfg = _load_genome_and_env(args)
        if args.tool == "vectors":
            trace = analysis.dump_vectors(genome, env_cfg, args.seed, args.out)
            print(f"{trace.steps} frames written to {args.out}")
        else:
            result, trace = agent.rollout(genome, env_cfg, args.seed, record_trace=True)
            curve = analysis.activation_variance(trace.h)
            lines = ["# normalized hidden-activation variance per frame", "frame,value"]
            lines += [f"{t},{v:.10g}" for t, v in enumerate(curve)]
            Path(args.out).write_text("\n".join(lines) + "\n")
            print(f"{len(curve)} frames written to {args.out}")
    elif args.tool == "distances":
        rows = analysis.distance_trajectory(args.run)
        analysis.write_distances_csv(rows, args.out)
        print(f"{len(rows)} archive entries written to {args.out}")
    elif args.tool == "reward-age":
        rows = []
        for path in args.log:
            rows.extend(read_log(path))
        stats = analysis.reward_age_stats(rows)
        analysis.write_reward_age_csv(stats, args.out)
        msg = f"{len(stats)} age buckets written to {args.out}"
        if len(stats) >= 2:
            rho = analysis.reward_age_correlation(stats)
            msg += f" (spearman rho {rho:.4f})"
        print(msg)
    return 0


def cmd_count_params(args) -> int:
    from evoworld.genome import ArchitectureConfig, COMPONENTS, count_params

    arch = (ArchitectureConfig.full_scale() if args.scale == "full"
            else ArchitectureConfig.desk_scale())
    total = 0
    for comp in COMPONENTS:
        n = count_params(arch, comp)
        total += n
        print(f"{comp} {n}")
    print(f"total {total}")
    return 0


def cmd_verify(args) -> int:
    from evoworld.verify import run_verify

    failures = run_verify(update_golden=args.update_golden)
    return 1 if failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handlers = {
        "evolve": cmd_evolve,
        "replay": cmd_replay,
        "analyze": cmd_analyze,
        "count-params": cmd_count_params,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except EvoworldError as e:
        print(f"evoworld: error: {e.category}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
