"""Three-component genome: flat layout, counting, init, mutation, serialization.

A genome is three disjoint float64 vectors:

  visual      conv stack (relu, stride 2, valid padding) + mean head +
              log-variance head.  Both heads are part of the evolved vector
              (the full encoder), but only the mean head is read at rollout
              time: the latent code is the deterministic mean output.
  memory      LSTM cell over concat(z, previous action) + optional
              mixture-density head (evolved but never consumed for control).
  controller  single linear layer concat(z, h) -> actions, tanh output.

Per-layer sub-segments and their byte layout are documented in
docs/formats.md; serialize/deserialize round-trips are bitwise exact.
"""

from __future__ import annotations

import binascii
import json
from dataclasses import dataclass, field, replace

import numpy as np

from evoworld import nn
from evoworld.errors import ConfigError, CorruptGenomeError
from evoworld.rng import RandomSource

COMPONENTS = ("visual", "memory", "controller")

_MAGIC = b"EVOWGENO"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureConfig:
    """Agent architecture; sizes fixed for the lifetime of a run."""

    image_size: int = 16
    channels: tuple = (16, 32)
    kernel: int = 4
    stride: int = 2
    z_dim: int = 8
    hidden_dim: int = 32
    n_mixtures: int = 5
    action_dim: int = 1
    mdn_head_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        for name in ("image_size", "kernel", "stride", "z_dim", "hidden_dim", "n_mixtures", "action_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"arch.{name} must be >= 1, got {getattr(self, name)}")
        if not self.channels:
            raise ConfigError("arch.channels must list at least one conv layer")
        # validate the conv chain up front so forward passes cannot shape-fail
        self.conv_sizes()

    @classmethod
    def full_scale(cls, action_dim: int = 3) -> "ArchitectureConfig":
        """64px architecture with the standard channel progression."""
        return cls(
            image_size=64,
            channels=(32, 64, 128, 256),
            kernel=4,
            z_dim=32,
            hidden_dim=256,
            action_dim=action_dim,
        )

    @classmethod
    def desk_scale(cls, action_dim: int = 1) -> "ArchitectureConfig":
        """16px architecture small enough for laptop-class runs."""
        return cls(action_dim=action_dim)

    def conv_sizes(self) -> list:
        """Spatial extent after each conv layer; raises if the stack collapses."""
        px = self.image_size
        sizes = []
        for i in range(len(self.channels)):
            try:
                px = nn.conv_output_size(px, self.kernel, self.stride)
            except ConfigError:
                raise ConfigError(
                    f"conv stack collapses at layer {i}: {px}px input with "
                    f"kernel {self.kernel} (channels={self.channels}, "
                    f"image_size={self.image_size})"
                )
            sizes.append(px)
        return sizes

    @property
    def conv_flat_out(self) -> int:
        return self.conv_sizes()[-1] ** 2 * self.channels[-1]

    @property
    def lstm_in(self) -> int:
        return self.z_dim + self.action_dim

    @property
    def controller_in(self) -> int:
        return self.z_dim + self.hidden_dim

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "channels": list(self.channels),
            "kernel": self.kernel,
            "stride": self.stride,
            "z_dim": self.z_dim,
            "hidden_dim": self.hidden_dim,
            "n_mixtures": self.n_mixtures,
            "action_dim": self.action_dim,
            "mdn_head_enabled": self.mdn_head_enabled,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown arch keys: {sorted(extra)}")
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)


@dataclass(frozen=True)
class LayerPlan:
    """One sub-segment of a component's flat vector."""

    name: str
    spec: nn.LayerSpec
    offset: int
    count: int
    fan_in: int


def layout(arch: ArchitectureConfig) -> dict:
    """Per-component list of LayerPlan, in canonical order."""
    plans = {c: [] for c in COMPONENTS}

    def add(component, name, spec, fan_in):
        off = sum(p.count for p in plans[component])
        plans[component].append(LayerPlan(name, spec, off, spec.param_count, fan_in))

    in_ch = 3
    for i, out_ch in enumerate(arch.channels):
        spec = nn.LayerSpec(
            "conv", in_ch, out_ch, kernel=arch.kernel, stride=arch.stride,
            activation="relu", label=f"conv{i}",
        )
        add("visual", f"conv{i}", spec, in_ch * arch.kernel**2)
        in_ch = out_ch
    flat = arch.conv_flat_out
    add("visual", "mean_head",
        nn.LayerSpec("linear", flat, arch.z_dim, label="mean_head"), flat)
    add("visual", "logvar_head",
        nn.LayerSpec("linear", flat, arch.z_dim, label="logvar_head"), flat)

    add("memory", "lstm",
        nn.LayerSpec("lstm-cell", arch.lstm_in, arch.hidden_dim, label="lstm"),
        arch.lstm_in + arch.hidden_dim)
    if arch.mdn_head_enabled:
        mdn_out = 3 * arch.n_mixtures * arch.z_dim
        add("memory", "mdn_head",
            nn.LayerSpec("linear", arch.hidden_dim, mdn_out, label="mdn_head"),
            arch.hidden_dim)

    add("controller", "actions",
        nn.LayerSpec("linear", arch.controller_in, arch.action_dim,
                     activation="tanh", label="actions"),
        arch.controller_in)
    return plans


def count_params(arch: ArchitectureConfig, component: str) -> int:
    """Exact length of a component's flat parameter vector."""
    if component not in COMPONENTS:
        raise ConfigError(f"unknown component {component!r}; expected one of {COMPONENTS}")
    return sum(p.count for p in layout(arch)[component])


@dataclass(frozen=True)
class Genome:
    """Immutable parameter vectors for the three agent components."""

    visual: np.ndarray
    memory: np.ndarray
    controller: np.ndarray
    arch: ArchitectureConfig

    def __post_init__(self):
        for comp in COMPONENTS:
            seg = getattr(self, comp)
            expected = count_params(self.arch, comp)
            if seg.shape != (expected,):
                raise ConfigError(
                    f"{comp} segment has {seg.size} params, layout requires {expected}"
                )
            seg.setflags(write=False)

    def segment(self, component: str) -> np.ndarray:
        if component not in COMPONENTS:
            raise ConfigError(f"unknown component {component!r}")
        return getattr(self, component)


@dataclass(frozen=True)
class MutationEvent:
    """Which component a mutation touched, and with what noise scale."""

    component: str
    sigma: float

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ConfigError(f"unknown component {self.component!r}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")


def init_genome(arch: ArchitectureConfig, rng: RandomSource) -> Genome:
    """Fresh genome; every layer drawn uniform with that layer's fan-in bound."""
    plans = layout(arch)
    segs = {}
    for comp in COMPONENTS:
        parts = [nn.he_uniform_init(p.fan_in, p.count, rng) for p in plans[comp]]
        segs[comp] = np.concatenate(parts) if parts else np.empty(0)
    return Genome(segs["visual"], segs["memory"], segs["controller"], arch)


def mutate(g: Genome, sigma: float, rng: RandomSource):
    """Gaussian-perturb exactly one component, chosen uniformly.

    Every parameter of the chosen component gets independent N(0, sigma^2)
    noise; the other two segments are shared unchanged with the parent.
    Returns (child genome, MutationEvent).
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    comp = COMPONENTS[int(rng.integers(3))]
    segs = {c: g.segment(c) for c in COMPONENTS}
    segs[comp] = segs[comp] + sigma * rng.standard_normal(segs[comp].shape[0])
    child = Genome(segs["visual"], segs["memory"], segs["controller"], g.arch)
    return child, MutationEvent(comp, sigma)


def weight_distance(a: Genome, b: Genome, component: str) -> float:
    """Euclidean distance between one component's flat vectors."""
    if a.arch != b.arch:
        raise ConfigError("weight_distance requires identical architectures")
    return float(np.linalg.norm(a.segment(component) - b.segment(component)))


# serialization ------------------------------------------------------------
#
# magic(8) | version u32 | header_len u32 | header json |
# per component in canonical order: count u64 | crc32 u32 | float64 LE data


def serialize_genome(g: Genome) -> bytes:
    header = {
        "arch": g.arch.to_dict(),
        "layout": {
            comp: [[p.name, p.count, p.fan_in] for p in layout(g.arch)[comp]]
            for comp in COMPONENTS
        },
        "dtype": "<f8",
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [
        _MAGIC,
        _FORMAT_VERSION.to_bytes(4, "little"),
        len(hdr).to_bytes(4, "little"),
        hdr,
    ]
    for comp in COMPONENTS:
        raw = np.ascontiguousarray(g.segment(comp), dtype="<f8").tobytes()
        out.append((len(raw) // 8).to_bytes(8, "little"))
        out.append((binascii.crc32(raw) & 0xFFFFFFFF).to_bytes(4, "little"))
        out.append(raw)
    return b"".join(out)


def deserialize_genome(data: bytes, expect_arch: ArchitectureConfig | None = None) -> Genome:
    """Parse a serialized genome; validates magic, version, and checksums.

    With expect_arch given, an architecture mismatch raises ConfigError
    rather than silently reinterpreting the stream.
    """
    view = memoryview(data)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise CorruptGenomeError(f"truncated genome stream while reading {what}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(8, "magic")) != _MAGIC:
        raise CorruptGenomeError("bad magic; not a genome file")
    version = int.from_bytes(take(4, "version"), "little")
    if version != _FORMAT_VERSION:
        raise CorruptGenomeError(f"unsupported genome format version {version}")
    hdr_len = int.from_bytes(take(4, "header length"), "little")
    try:
        header = json.loads(bytes(take(hdr_len, "header")).decode("utf-8"))
        arch = ArchitectureConfig.from_dict(header["arch"])
    except (ValueError, KeyError, ConfigError) as e:
        raise CorruptGenomeError(f"bad genome header: {e}") from e
    if expect_arch is not None and arch != expect_arch:
        raise ConfigError(
            f"genome architecture {arch.to_dict()} does not match expected "
            f"{expect_arch.to_dict()}"
        )
    segs = {}
    for comp in COMPONENTS:
        count = int.from_bytes(take(8, f"{comp} count"), "little")
        expected = count_params(arch, comp)
        if count != expected:
            raise CorruptGenomeError(
                f"{comp} segment claims {count} params, layout requires {expected}"
            )
        crc = int.from_bytes(take(4, f"{comp} checksum"), "little")
        raw = bytes(take(8 * count, f"{comp} data"))
        if (binascii.crc32(raw) & 0xFFFFFFFF) != crc:
            raise CorruptGenomeError(f"{comp} segment failed checksum")
        segs[comp] = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if pos != len(view):
        raise CorruptGenomeError(f"{len(view) - pos} trailing bytes after genome data")
    return Genome(segs["visual"], segs["memory"], segs["controller"], arch)


def save_genome(g: Genome, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_genome(g))


def load_genome(path, expect_arch: ArchitectureConfig | None = None) -> Genome:
    with open(path, "rb") as f:
        return deserialize_genome(f.read(), expect_arch)


def genome_id(g: Genome) -> str:
    """Short stable content hash, used to label analysis exports."""
    crc = 0
    for comp in COMPONENTS:
        crc = binascii.crc32(g.segment(comp).tobytes(), crc)
    return f"{crc & 0xFFFFFFFF:08x}"
