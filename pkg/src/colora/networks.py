"""StyleGAN2-lite generator and a Wasserstein critic.

The generator is a mapping MLP (z -> w) followed by a synthesis stack that
starts from a learned constant. Each synthesis conv is modulated by a
per-layer affine style of ``w``, receives seeded noise and a bias, then a
leaky ReLU; blocks after the first upsample 2x first. Modulation scales the
input channels before a shared-kernel convolution, which equals the
per-sample weight-scaling formulation when demodulation is off.

Every mapping FC and synthesis conv weight goes through
:func:`~colora.adapters.merged_weight` when adapters are supplied.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from colora import autodiff as ad
from colora.adapters import AdapterSet, merged_weight
from colora.arch import ArchSpec
from colora.autodiff import Tensor
from colora.errors import ShapeError

NOISE_INIT = 0.1


@dataclass
class Weights:
    """Named tensors for one network, tied to the arch they were built from."""

    arch: ArchSpec
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def set_trainable(self, flag: bool) -> "Weights":
        for t in self.tensors.values():
            t.requires_grad = flag
            t.grad = None
        return self

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def fingerprint(self) -> bytes:
        """SHA-256 over names, dtypes, shapes and raw bytes of every tensor."""
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            t = self.tensors[name]
            h.update(name.encode())
            h.update(str(t.dtype).encode())
            h.update(np.asarray(t.shape, dtype=np.int64).tobytes())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.digest()

    def copy(self) -> "Weights":
        return Weights(self.arch, {k: Tensor._wrap(v.data.copy()) for k, v in self.tensors.items()})

    def astype(self, dtype) -> "Weights":
        return Weights(self.arch, {k: Tensor._wrap(v.data.astype(dtype)) for k, v in self.tensors.items()})


GeneratorWeights = Weights
CriticWeights = Weights


def _init_tensor(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".noise_strength"):
        return np.full(shape, NOISE_INIT)
    if name.endswith("affine.bias"):
        return np.ones(shape)
    if name.endswith(".bias"):
        return np.zeros(shape)
    if name == "synthesis.const":
        return rng.standard_normal(shape)
    fan_in = int(np.prod(shape[1:]))
    gain = 1.0 if ("affine" in name or "torgb" in name or name.startswith("critic.out")) else np.sqrt(2.0)
    return rng.standard_normal(shape) * (gain / np.sqrt(fan_in))


def _init(arch: ArchSpec, shapes: dict[str, tuple[int, ...]], seed: int) -> Weights:
    rng = np.random.default_rng(seed)
    dtype = ad.get_default_dtype()
    return Weights(arch, {name: Tensor(_init_tensor(name, shape, rng), dtype=dtype)
                          for name, shape in shapes.items()})


def init_generator(arch: ArchSpec, seed: int) -> Weights:
    return _init(arch, arch.generator_tensor_shapes(), seed)


def init_critic(arch: ArchSpec, seed: int) -> Weights:
    return _init(arch, arch.critic_tensor_shapes(), seed)


def _fc(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return ad.add_row_bias(ad.matmul(x, ad.transpose(weight)), bias)


def _weight(weights: Weights, adapters: AdapterSet | None, layer: str) -> Tensor:
    base = weights[f"{layer}.weight"]
    if adapters is None:
        return base
    return merged_weight(base, adapters.get(layer))


def normalize_latents(z: np.ndarray) -> np.ndarray:
    """Scale each latent to unit second moment."""
    z = np.asarray(z)
    return z / np.sqrt(np.mean(z * z, axis=1, keepdims=True) + 1e-8)


def mapping_forward(z, weights: Weights, adapters: AdapterSet | None = None) -> Tensor:
    arch = weights.arch
    if adapters is not None:
        adapters.check_arch(arch)
    zd = z.data if isinstance(z, Tensor) else np.asarray(z)
    if zd.ndim != 2 or zd.shape[1] != arch.z_dim:
        raise ShapeError(f"latents must be [batch, {arch.z_dim}], got {zd.shape}")
    x = Tensor._wrap(normalize_latents(zd).astype(weights["mapping.fc0.weight"].dtype))
    for i in range(arch.mapping_layers):
        name = f"mapping.fc{i}"
        x = ad.leaky_relu(_fc(x, _weight(weights, adapters, name), weights[f"{name}.bias"]), 0.2)
    return x


def modulated_conv(x: Tensor, style: Tensor, weight: Tensor, demodulate: bool = False) -> Tensor:
    """Conv of ``x`` whose input channels are scaled per sample by ``style``."""
    out = ad.conv2d(ad.scale_channels(x, style), weight)
    if demodulate:
        # d[n, o] = 1 / sqrt(sum_i style[n, i]^2 * sum_uv weight[o, i, u, v]^2)
        wsq = ad.sum(ad.mul(weight, weight), axis=(2, 3))  # [o, i]
        energy = ad.matmul(ad.mul(style, style), ad.transpose(wsq))  # [n, o]
        out = ad.scale_channels(out, ad.rsqrt(energy, 1e-8))
    return out


def _noise_maps(arch: ArchSpec, batch: int, noise_seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(noise_seed)
    maps = {}
    for j, b in enumerate(arch.synthesis_blocks):
        for l in range(b.layers):
            maps[f"synthesis.b{j}.conv{l}"] = rng.standard_normal((batch, 1, b.resolution, b.resolution))
    return maps


def _style(w: Tensor, weights: Weights, layer: str) -> Tensor:
    return _fc(w, weights[f"{layer}.affine.weight"], weights[f"{layer}.affine.bias"])


def _torgb(x: Tensor, w: Tensor, weights: Weights, layer: str) -> Tensor:
    rgb = modulated_conv(x, _style(w, weights, layer), weights[f"{layer}.weight"])
    return ad.add_channel_bias(rgb, weights[f"{layer}.bias"])


def synthesis_forward(w: Tensor, weights: Weights, adapters: AdapterSet | None = None,
                      noise_seed: int = 0) -> Tensor:
    """Images in [-1, 1] with shape ``[batch, img_channels, R, R]``."""
    arch = weights.arch
    if adapters is not None:
        adapters.check_arch(arch)
    n = w.shape[0]
    noise = _noise_maps(arch, n, noise_seed)
    x = ad.expand_batch(weights["synthesis.const"], n)
    rgb = None
    for j, block in enumerate(arch.synthesis_blocks):
        if j > 0:
            x = ad.upsample2x_nearest(x)
        for l in range(block.layers):
            name = f"synthesis.b{j}.conv{l}"
            x = modulated_conv(x, _style(w, weights, name), _weight(weights, adapters, name), arch.demodulate)
            x = ad.inject_noise(x, noise[name], weights[f"{name}.noise_strength"])
            x = ad.leaky_relu(ad.add_channel_bias(x, weights[f"{name}.bias"]), 0.2)
        if arch.rgb_skip:
            y = _torgb(x, w, weights, f"synthesis.b{j}.torgb")
            rgb = y if rgb is None else ad.add(ad.upsample2x_nearest(rgb), y)
    if not arch.rgb_skip:
        rgb = _torgb(x, w, weights, "synthesis.torgb")
    return ad.tanh(rgb)


def generate(z, weights: Weights, adapters: AdapterSet | None = None, noise_seed: int = 0) -> Tensor:
    return synthesis_forward(mapping_forward(z, weights, adapters), weights, adapters, noise_seed)


def critic_weight_gain(weights: Weights, clip_c: float | None) -> dict[str, float]:
    """Runtime multipliers ``1 / (c * sqrt(fan_in))`` for clip-normalised critic weights.

    With stored weights confined to ``[-c, c]`` the effective weights then sit
    at He-like magnitude, so scores do not vanish with depth. ``None`` means
    unit gain everywhere.
    """
    gains = {}
    for name, t in weights.tensors.items():
        if name.endswith(".weight"):
            gains[name] = 1.0 if clip_c is None else 1.0 / (clip_c * np.sqrt(np.prod(t.shape[1:])))
    return gains


def critic_forward(img: Tensor, weights: Weights, gains: dict[str, float] | None = None) -> Tensor:
    """Unbounded per-sample scores ``[batch, 1]``."""
    arch = weights.arch
    r = arch.resolution
    if img.ndim != 4 or img.shape[1:] != (arch.img_channels, r, r):
        raise ShapeError(f"critic expects [batch, {arch.img_channels}, {r}, {r}], got {img.shape}")

    def w(name):
        t = weights[name]
        return t if gains is None or gains[name] == 1.0 else ad.scale(t, gains[name])

    x = ad.conv2d(img, w("critic.fromrgb.weight"))
    x = ad.leaky_relu(ad.add_channel_bias(x, weights["critic.fromrgb.bias"]), 0.2)
    last = len(arch.critic_blocks) - 1
    for j, _ in enumerate(arch.critic_blocks):
        x = ad.conv2d(x, w(f"critic.b{j}.weight"))
        x = ad.leaky_relu(ad.add_channel_bias(x, weights[f"critic.b{j}.bias"]), 0.2)
        if j < last:
            x = ad.avgpool2x(x)
    x = ad.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
    return _fc(x, w("critic.out.weight"), weights["critic.out.bias"])


def sample_latents(arch: ArchSpec, n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, arch.z_dim))
