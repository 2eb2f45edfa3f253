"""Self-check battery: exact counts, kernel parity, goldens, determinism.

Run through the CLI as `evoworld verify`.  Each check prints one PASS or
FAIL line; the battery returns the number of failures.  Golden frame
checksums live in data/golden.json and can be regenerated in place with
`evoworld verify --update-golden` after an intentional render change.
"""

from __future__ import annotations

import json
import shutil
import tempfile
import zlib
from importlib import resources
from pathlib import Path

import numpy as np

from evoworld import nn
from evoworld.envs import EnvConfig, env_reset, env_step
from evoworld.genome import (
    ArchitectureConfig,
    count_params,
    deserialize_genome,
    init_genome,
    serialize_genome,
)
from evoworld.rng import RandomSource

EXPECTED_COUNTS = {
    "full": {"visual": 755_744, "memory": 422_368, "controller": 867},
    "desk": {"visual": 11_072, "memory": 9_336, "controller": 41},
}


def frame_checksum(obs: np.ndarray) -> int:
    """Platform-stable checksum: quantize to 8-bit, then crc32."""
    q = np.clip(np.rint(obs * 255.0), 0, 255).astype(np.uint8)
    return zlib.crc32(q.tobytes())


def _dodge_script(t: int):
    return [(-1.0, 0.0, 1.0, 0.5, -0.5)[t % 5]]


def _track_script(t: int):
    steer = (0.0, 0.6, -0.6)[t % 3]
    return [steer, 1.0, 0.0]


GOLDEN_PROBES = {
    "dodge": (EnvConfig.dodge_desk, _dodge_script, 0, (0, 3, 10, 25)),
    "track": (EnvConfig.track_desk, _track_script, 0, (0, 3, 10, 25)),
}


def compute_goldens() -> dict:
    out = {}
    for name, (mk_cfg, script, seed, frames) in GOLDEN_PROBES.items():
        cfg = mk_cfg()
        state, obs = env_reset(cfg, seed)
        sums = {}
        t = 0
        last = max(frames)
        if 0 in frames:
            sums["0"] = frame_checksum(obs)
        while t < last:
            state, obs, _, done = env_step(cfg, state, script(t))
            t += 1
            if t in frames:
                sums[str(t)] = frame_checksum(obs)
            if done:
                break
        out[name] = {"seed": seed, "frames": sums}
    return out


def _golden_path() -> Path:
    return Path(resources.files("evoworld.data") / "golden.json")


def load_goldens() -> dict:
    return json.loads(_golden_path().read_text())


def update_goldens() -> Path:
    path = _golden_path()
    path.write_text(json.dumps(compute_goldens(), indent=2, sort_keys=True) + "\n")
    return path


# individual checks --------------------------------------------------------


def check_param_counts() -> str | None:
    archs = {"full": ArchitectureConfig.full_scale(),
             "desk": ArchitectureConfig.desk_scale()}
    for scale, arch in archs.items():
        for comp, want in EXPECTED_COUNTS[scale].items():
            got = count_params(arch, comp)
            if got != want:
                return f"{scale} {comp}: counted {got}, expected {want}"
    return None


def check_backend_parity() -> str | None:
    backends = nn.available_backends()
    if len(backends) < 2:
        return None  # single backend: nothing to compare, counted as pass
    rng = RandomSource(2024, 77)
    img = rng.uniform(0.0, 1.0, (3, 12, 12))
    conv = nn.LayerSpec("conv", 3, 4, kernel=4, stride=2, activation="relu", label="p")
    lin = nn.LayerSpec("linear", 9, 5, activation="tanh", label="p")
    wc = rng.standard_normal(conv.param_count)
    wl = rng.standard_normal(lin.param_count)
    x = rng.standard_normal(9)
    h = rng.standard_normal(6)
    c = rng.standard_normal(6)
    wr = rng.standard_normal(4 * (6 * (9 + 6) + 6))
    outs = {}
    saved = nn.backend_name()
    try:
        for b in backends:
            nn.set_backend(b)
            outs[b] = (
                nn.conv2d_forward(img, wc, conv),
                nn.linear_forward(x, wl, lin),
                nn.lstm_cell_forward(x, h, c, wr),
            )
    finally:
        nn.set_backend(saved)
    a, b = (outs[k] for k in backends[:2])
    diffs = [
        np.abs(a[0] - b[0]).max(),
        np.abs(a[1] - b[1]).max(),
        max(np.abs(a[2][0] - b[2][0]).max(), np.abs(a[2][1] - b[2][1]).max()),
    ]
    worst = float(max(diffs))
    if worst > 1e-12:
        return f"backends {backends[:2]} disagree by {worst:.3e}"
    return None


def check_lstm_closed_form() -> str | None:
    hidden = 5
    c = np.linspace(-2, 2, hidden)
    h = np.zeros(hidden)
    x = np.ones(3)
    w = np.zeros(4 * (hidden * (3 + hidden) + hidden))
    h2, c2 = nn.lstm_cell_forward(x, h, c, w)
    want_c = 0.5 * c
    want_h = 0.5 * np.tanh(want_c)
    if np.abs(c2 - want_c).max() > 1e-12 or np.abs(h2 - want_h).max() > 1e-12:
        return "zero-weight recurrence does not match sigmoid(0)=0.5 closed form"
    return None


def check_genome_roundtrip() -> str | None:
    arch = ArchitectureConfig.desk_scale()
    g = init_genome(arch, RandomSource(11, 3))
    g2 = deserialize_genome(serialize_genome(g))
    for comp in ("visual", "memory", "controller"):
        if not np.array_equal(g.segment(comp), g2.segment(comp)):
            return f"{comp} segment changed across serialize/deserialize"
    return None


def check_golden_frames() -> str | None:
    try:
        stored = load_goldens()
    except (OSError, json.JSONDecodeError) as e:
        return f"cannot load golden data: {e}"
    fresh = compute_goldens()
    for name, data in fresh.items():
        if name not in stored:
            return f"no stored goldens for env {name!r}"
        for t, crc in data["frames"].items():
            want = stored[name]["frames"].get(t)
            if want != crc:
                return f"{name} frame {t}: checksum {crc:#010x}, stored {want}"
    return None


def check_micro_determinism() -> str | None:
    from evoworld.harness import RunConfig, log_digest, read_log, run_experiment

    tmp = Path(tempfile.mkdtemp(prefix="evoworld-verify-"))
    try:
        digests = []
        for leg in ("x", "y"):
            cfg = RunConfig(population_size=4, generations=2, master_seed=9,
                            elite_top_k=1, out_dir=str(tmp / leg),
                            checkpoint_every=0)
            run_experiment(cfg)
            digests.append(log_digest(read_log(tmp / leg / "run.jsonl")))
        if digests[0] != digests[1]:
            return f"two identical micro runs diverged: {digests[0][:12]} vs {digests[1][:12]}"
        return None
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


CHECKS = (
    ("param-counts", check_param_counts),
    ("backend-parity", check_backend_parity),
    ("lstm-closed-form", check_lstm_closed_form),
    ("genome-roundtrip", check_genome_roundtrip),
    ("golden-frames", check_golden_frames),
    ("micro-determinism", check_micro_determinism),
)


def run_verify(update_golden: bool = False, out=print) -> int:
    """Run every check; returns the number of failures."""
    if update_golden:
        path = update_goldens()
        out(f"golden data rewritten at {path}")
    failures = 0
    for name, fn in CHECKS:
        try:
            problem = fn()
        except Exception as e:  # a crashing check is a failing check
            problem = f"raised {type(e).__name__}: {e}"
        if problem is None:
            out(f"PASS {name}")
        else:
            failures += 1
            out(f"FAIL {name}: {problem}")
    return failures
