"""Declarative generator/critic architecture descriptions.

An :class:`ArchSpec` is enough to build weights, enumerate adaptable layers
and count parameters without allocating anything.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Iterator

from colora.errors import ConfigError


@dataclass(frozen=True)
class SynthesisBlock:
    resolution: int
    c_in: int
    c_out: int
    kernel: int = 3
    layers: int = 1  # convs in the block; the first maps c_in -> c_out


@dataclass(frozen=True)
class CriticBlock:
    resolution: int
    c_in: int
    c_out: int
    kernel: int = 3


@dataclass(frozen=True)
class LayerSpec:
    """One weight-bearing layer. ``shape`` is the weight shape."""

    name: str
    kind: str  # "fc" or "conv"
    shape: tuple[int, ...]
    adaptable: bool


@dataclass(frozen=True)
class ArchSpec:
    name: str
    z_dim: int
    w_dim: int
    mapping_layers: int
    mapping_width: int
    synthesis_blocks: tuple[SynthesisBlock, ...]
    critic_blocks: tuple[CriticBlock, ...]
    img_channels: int = 3
    base_resolution: int = 4
    rgb_skip: bool = False
    demodulate: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def resolution(self) -> int:
        return self.synthesis_blocks[-1].resolution

    def validate(self) -> None:
        positive = [self.z_dim, self.w_dim, self.mapping_layers, self.mapping_width,
                    self.img_channels, self.base_resolution]
        if any(v <= 0 for v in positive):
            raise ConfigError(f"arch {self.name}: dimensions must be positive")
        if not self.synthesis_blocks or not self.critic_blocks:
            raise ConfigError(f"arch {self.name}: needs synthesis and critic blocks")
        if self.synthesis_blocks[0].resolution != self.base_resolution:
            raise ConfigError(f"arch {self.name}: first block must run at the base resolution")
        prev = None
        for b in self.synthesis_blocks:
            if min(b.resolution, b.c_in, b.c_out, b.kernel, b.layers) <= 0:
                raise ConfigError(f"arch {self.name}: block {b} has non-positive fields")
            if b.kernel % 2 == 0:
                raise ConfigError(f"arch {self.name}: kernel sizes must be odd, got {b.kernel}")
            if prev is not None:
                if b.resolution != 2 * prev.resolution:
                    raise ConfigError(f"arch {self.name}: resolutions must double per block")
                if b.c_in != prev.c_out:
                    raise ConfigError(f"arch {self.name}: block channels do not chain at {b.resolution}")
            prev = b
        prev = None
        for b in self.critic_blocks:
            if min(b.resolution, b.c_in, b.c_out, b.kernel) <= 0 or b.kernel % 2 == 0:
                raise ConfigError(f"arch {self.name}: invalid critic block {b}")
            if prev is not None and (b.resolution * 2 != prev.resolution or b.c_in != prev.c_out):
                raise ConfigError(f"arch {self.name}: critic blocks must halve resolution and chain")
            prev = b
        if self.critic_blocks[0].resolution != self.resolution:
            raise ConfigError(f"arch {self.name}: critic must start at the output resolution")

    # ------------------------------------------------------------ layers

    def mapping_dims(self) -> list[tuple[int, int]]:
        """(d_in, d_out) for every mapping FC layer."""
        dims = []
        for i in range(self.mapping_layers):
            d_in = self.z_dim if i == 0 else self.mapping_width
            d_out = self.w_dim if i == self.mapping_layers - 1 else self.mapping_width
            dims.append((d_in, d_out))
        return dims

    def synthesis_convs(self) -> Iterator[tuple[str, int, int, int]]:
        """(name, c_in, c_out, k) for every modulated synthesis conv, in forward order."""
        for j, b in enumerate(self.synthesis_blocks):
            for l in range(b.layers):
                yield f"synthesis.b{j}.conv{l}", (b.c_in if l == 0 else b.c_out), b.c_out, b.kernel

    def torgb_layers(self) -> list[tuple[str, int]]:
        if self.rgb_skip:
            return [(f"synthesis.b{j}.torgb", b.c_out) for j, b in enumerate(self.synthesis_blocks)]
        return [("synthesis.torgb", self.synthesis_blocks[-1].c_out)]

    def generator_layers(self) -> list[LayerSpec]:
        """Weight-bearing generator layers. ToRGB convs are frozen, never adapted."""
        out = [LayerSpec(f"mapping.fc{i}", "fc", (d_out, d_in), True)
               for i, (d_in, d_out) in enumerate(self.mapping_dims())]
        out += [LayerSpec(name, "conv", (co, ci, k, k), True) for name, ci, co, k in self.synthesis_convs()]
        out += [LayerSpec(name, "conv", (self.img_channels, c, 1, 1), False) for name, c in self.torgb_layers()]
        return out

    def adaptable_layers(self, placement: str = "both") -> list[LayerSpec]:
        if placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}, got {placement!r}")
        kinds = {"both": ("fc", "conv"), "fc": ("fc",), "conv": ("conv",)}[placement]
        return [l for l in self.generator_layers() if l.adaptable and l.kind in kinds]

    def generator_tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        """Every frozen generator tensor, including biases, affines, noise strengths."""
        shapes: dict[str, tuple[int, ...]] = {}
        for i, (d_in, d_out) in enumerate(self.mapping_dims()):
            shapes[f"mapping.fc{i}.weight"] = (d_out, d_in)
            shapes[f"mapping.fc{i}.bias"] = (d_out,)
        first = self.synthesis_blocks[0]
        shapes["synthesis.const"] = (first.c_in, self.base_resolution, self.base_resolution)
        for name, ci, co, k in self.synthesis_convs():
            shapes[f"{name}.affine.weight"] = (ci, self.w_dim)
            shapes[f"{name}.affine.bias"] = (ci,)
            shapes[f"{name}.weight"] = (co, ci, k, k)
            shapes[f"{name}.bias"] = (co,)
            shapes[f"{name}.noise_strength"] = (1,)
        for name, c in self.torgb_layers():
            shapes[f"{name}.affine.weight"] = (c, self.w_dim)
            shapes[f"{name}.affine.bias"] = (c,)
            shapes[f"{name}.weight"] = (self.img_channels, c, 1, 1)
            shapes[f"{name}.bias"] = (self.img_channels,)
        return shapes

    def critic_tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        rgb_c = self.critic_blocks[0].c_in
        shapes = {"critic.fromrgb.weight": (rgb_c, self.img_channels, 1, 1),
                  "critic.fromrgb.bias": (rgb_c,)}
        for j, b in enumerate(self.critic_blocks):
            shapes[f"critic.b{j}.weight"] = (b.c_out, b.c_in, b.kernel, b.kernel)
            shapes[f"critic.b{j}.bias"] = (b.c_out,)
        last = self.critic_blocks[-1]
        shapes["critic.out.weight"] = (1, last.c_out * last.resolution * last.resolution)
        shapes["critic.out.bias"] = (1,)
        return shapes

    # ------------------------------------------------------------ identity

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        d["synthesis_blocks"] = tuple(SynthesisBlock(**b) for b in d["synthesis_blocks"])
        d["critic_blocks"] = tuple(CriticBlock(**b) for b in d["critic_blocks"])
        return cls(**d)

    def fingerprint(self) -> bytes:
        """SHA-256 over the canonical JSON form (32 bytes)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()


PLACEMENTS = ("both", "fc", "conv")


def mirror_critic(blocks: tuple[SynthesisBlock, ...], width: float = 1.0) -> tuple[CriticBlock, ...]:
    """Critic blocks running the synthesis resolutions top-down with mirrored channels."""
    chans = [max(1, int(round(b.c_out * width))) for b in reversed(blocks)]
    out = []
    for j, b in enumerate(reversed(blocks)):
        c_in = chans[j]
        c_out = chans[j + 1] if j + 1 < len(chans) else chans[j]
        out.append(CriticBlock(b.resolution, c_in, c_out, b.kernel))
    return tuple(out)


def _desk() -> ArchSpec:
    blocks = (SynthesisBlock(4, 128, 128), SynthesisBlock(8, 128, 128),
              SynthesisBlock(16, 128, 64), SynthesisBlock(32, 64, 32))
    return ArchSpec("desk", z_dim=64, w_dim=64, mapping_layers=4, mapping_width=64,
                    synthesis_blocks=blocks, critic_blocks=mirror_critic(blocks))


def _desk_lite() -> ArchSpec:
    # same topology as "desk" at ~3/8 width and a half-width critic; sized for a single CPU core
    blocks = (SynthesisBlock(4, 48, 48), SynthesisBlock(8, 48, 48),
              SynthesisBlock(16, 48, 24), SynthesisBlock(32, 24, 12))
    return ArchSpec("desk-lite", z_dim=64, w_dim=64, mapping_layers=4, mapping_width=64,
                    synthesis_blocks=blocks, critic_blocks=mirror_critic(blocks, 0.5))


def _stylegan2_256() -> ArchSpec:
    # channel layout of the common 256px StyleGAN2 (channel multiplier 2): 512 up to 64px
    chans = {4: 512, 8: 512, 16: 512, 32: 512, 64: 512, 128: 256, 256: 128}
    blocks = [SynthesisBlock(4, 512, 512, 3, 1)]
    prev = 512
    for res in (8, 16, 32, 64, 128, 256):
        blocks.append(SynthesisBlock(res, prev, chans[res], 3, 2))
        prev = chans[res]
    blocks = tuple(blocks)
    return ArchSpec("stylegan2-256", z_dim=512, w_dim=512, mapping_layers=8, mapping_width=512,
                    synthesis_blocks=blocks, critic_blocks=mirror_critic(blocks), rgb_skip=True)


PRESETS = {"desk": _desk, "desk-lite": _desk_lite, "stylegan2-256": _stylegan2_256}


def preset(name: str) -> ArchSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown arch preset {name!r}; known: {sorted(PRESETS)}") from None
