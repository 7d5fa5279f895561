"""Low-rank adapters over frozen generator weights.

Fully-connected layers get a plain LoRA update ``(alpha/r) * B @ A``.
Convolutions get LoRA-in-LoRA: the high-order factor is itself a product,

    B     = act(B' x M_inst)           B'[c_out, r], M_inst[r, r, k, k]
    delta = (alpha/r) * act(B x A)     A[r, c_in]

with ``B'`` contracting the first rank axis of ``M_inst`` and ``B`` contracting
its remaining rank axis with ``A``.

The ``B``/``B'`` factors start at zero, so every delta is exactly zero until
the first optimizer step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from colora import autodiff as ad
from colora.arch import ArchSpec, LayerSpec
from colora.autodiff import Tensor
from colora.errors import FingerprintError, ShapeError

ACTIVATIONS = ("relu", "leaky_relu", "none")
INIT_STD = 0.02


def _act(t: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return ad.relu(t)
    if activation == "leaky_relu":
        return ad.leaky_relu(t, 0.2)
    if activation == "none":
        return t
    raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


@dataclass
class LoraFcAdapter:
    B: Tensor  # [d_out, r]
    A: Tensor  # [r, d_in]
    alpha: float
    rank: int

    kind = "fc"

    def __post_init__(self):
        r = self.rank
        if self.B.ndim != 2 or self.A.ndim != 2 or self.B.shape[1] != r or self.A.shape[0] != r:
            raise ShapeError(f"LoRA FC factors {self.B.shape} x {self.A.shape} do not match rank {r}")
        if r < 1 or r > min(self.B.shape[0], self.A.shape[1]):
            raise ShapeError(f"rank {r} exceeds layer dims {self.B.shape[0]}x{self.A.shape[1]}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @property
    def delta_shape(self) -> tuple[int, int]:
        return (self.B.shape[0], self.A.shape[1])

    def factors(self) -> dict[str, Tensor]:
        return {"B": self.B, "A": self.A}


@dataclass
class LLoraConvAdapter:
    B_prime: Tensor  # [c_out, r]
    M_inst: Tensor  # [r, r, k, k]
    A: Tensor  # [r, c_in]
    alpha: float
    rank: int
    activation: str = "relu"

    kind = "conv"

    def __post_init__(self):
        r = self.rank
        m = self.M_inst.shape
        if (self.B_prime.ndim != 2 or self.B_prime.shape[1] != r or self.A.ndim != 2
                or self.A.shape[0] != r or len(m) != 4 or m[:2] != (r, r) or m[2] != m[3]):
            raise ShapeError(f"LLoRA factors {self.B_prime.shape}, {m}, {self.A.shape} "
                             f"do not match rank {r}")
        if r < 1 or r > min(self.B_prime.shape[0], self.A.shape[1]):
            raise ShapeError(f"rank {r} exceeds layer channels {self.B_prime.shape[0]}x{self.A.shape[1]}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def kernel(self) -> int:
        return self.M_inst.shape[2]

    @property
    def delta_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel
        return (self.B_prime.shape[0], self.A.shape[1], k, k)

    def factors(self) -> dict[str, Tensor]:
        return {"B_prime": self.B_prime, "M_inst": self.M_inst, "A": self.A}


Adapter = Union[LoraFcAdapter, LLoraConvAdapter]


def lora_fc_delta(a: LoraFcAdapter) -> Tensor:
    return ad.scale(ad.matmul(a.B, a.A), a.alpha / a.rank)


def llora_conv_B(a: LLoraConvAdapter) -> Tensor:
    """``act(B' x M_inst)`` as a ``[c_out, r, k, k]`` tensor."""
    r, k = a.rank, a.kernel
    c_out = a.B_prime.shape[0]
    flat = ad.matmul(a.B_prime, ad.reshape(a.M_inst, (r, r * k * k)))
    return ad.reshape(_act(flat, a.activation), (c_out, r, k, k))


def llora_conv_delta(a: LLoraConvAdapter) -> Tensor:
    r, k = a.rank, a.kernel
    c_out, c_in = a.B_prime.shape[0], a.A.shape[1]
    b = llora_conv_B(a)
    rows = ad.reshape(ad.permute(b, (0, 2, 3, 1)), (c_out * k * k, r))
    inner = _act(ad.matmul(rows, a.A), a.activation)  # [(o, u, v), i]
    delta = ad.permute(ad.reshape(inner, (c_out, k, k, c_in)), (0, 3, 1, 2))
    return ad.scale(delta, a.alpha / a.rank)


def adapter_delta(a: Adapter) -> Tensor:
    return lora_fc_delta(a) if a.kind == "fc" else llora_conv_delta(a)


def merged_weight(base: Tensor, a: Adapter | None) -> Tensor:
    """Frozen base weight plus the adapter delta; gradients reach only the factors."""
    if base.requires_grad:
        raise ValueError("base weights must be frozen (requires_grad=False) when adapted")
    if a is None:
        return base
    if tuple(base.shape) != tuple(a.delta_shape):
        raise ShapeError(f"adapter delta {a.delta_shape} does not match base weight {base.shape}")
    return ad.add(base, adapter_delta(a))


@dataclass
class AdapterSet:
    """Per-task adapters keyed by layer name, bound to one architecture."""

    adapters: dict[str, Adapter]
    arch_fingerprint: bytes
    rank: int
    alpha_fc: float
    alpha_conv: float
    placement: str = "both"
    activation: str = "relu"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def parameters(self) -> list[Tensor]:
        return [t for a in self.adapters.values() for t in a.factors().values()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{name}/{fname}", t) for name, a in self.adapters.items()
                for fname, t in a.factors().items()]

    def num_params(self) -> int:
        return sum(t.size for t in self.parameters())

    def check_arch(self, arch: ArchSpec) -> None:
        if self.arch_fingerprint != arch.fingerprint():
            raise FingerprintError(f"adapters were built for a different architecture than {arch.name!r}")

    def get(self, name: str) -> Adapter | None:
        return self.adapters.get(name)

    def deltas_zero(self) -> bool:
        with ad.no_tape():
            return all(not np.any(adapter_delta(a).data) for a in self.adapters.values())

    def bitwise_equal(self, other: "AdapterSet") -> bool:
        if (self.arch_fingerprint != other.arch_fingerprint or self.rank != other.rank
                or self.alpha_fc != other.alpha_fc or self.alpha_conv != other.alpha_conv):
            return False
        mine, theirs = self.named_parameters(), other.named_parameters()
        if [n for n, _ in mine] != [n for n, _ in theirs]:
            return False
        return all(a.dtype == b.dtype and a.shape == b.shape and a.data.tobytes() == b.data.tobytes()
                   for (_, a), (_, b) in zip(mine, theirs))


def _check_rank(layer: LayerSpec, r: int) -> None:
    if layer.kind == "fc":
        limit = min(layer.shape)
    else:
        limit = min(layer.shape[0], layer.shape[1])
    if r > limit:
        raise ShapeError(f"rank {r} exceeds min dimension {limit} of layer {layer.name}")


def init_adapter_set(arch: ArchSpec, r: int, alphas: tuple[float, float], seed: int,
                     activation: str = "relu", placement: str = "both") -> AdapterSet:
    """Fresh adapters for every adaptable layer: zero B/B', Normal(0, 0.02^2) elsewhere."""
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    alpha_fc, alpha_conv = alphas
    rng = np.random.default_rng(seed)
    dtype = ad.get_default_dtype()

    def normal(*shape):
        return Tensor(rng.normal(0.0, INIT_STD, size=shape), requires_grad=True, dtype=dtype)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)

    adapters: dict[str, Adapter] = {}
    for layer in arch.adaptable_layers(placement):
        _check_rank(layer, r)
        if layer.kind == "fc":
            d_out, d_in = layer.shape
            adapters[layer.name] = LoraFcAdapter(zeros(d_out, r), normal(r, d_in), alpha_fc, r)
        else:
            c_out, c_in, k, _ = layer.shape
            m = normal(r, r, k, k)
            a = normal(r, c_in)
            adapters[layer.name] = LLoraConvAdapter(zeros(c_out, r), m, a, alpha_conv, r, activation)
    return AdapterSet(adapters, arch.fingerprint(), r, float(alpha_fc), float(alpha_conv),
                      placement, activation)


@dataclass
class ParamCountReport:
    base_params: int
    adapter_params: int
    per_layer: dict[str, int]
    ratio: float
    rank: int
    arch: str

    def to_dict(self) -> dict:
        return {"arch": self.arch, "rank": self.rank, "base_params": self.base_params,
                "adapter_params": self.adapter_params, "ratio": self.ratio,
                "per_layer": self.per_layer}


def adapter_param_count(layer: LayerSpec, r: int) -> int:
    if layer.kind == "fc":
        d_out, d_in = layer.shape
        return r * (d_in + d_out)
    c_out, c_in, k, _ = layer.shape
    return c_out * r + r * r * k * k + r * c_in


def count_params(arch: ArchSpec, r: int, placement: str = "both") -> ParamCountReport:
    per_layer = {l.name: adapter_param_count(l, r) for l in arch.adaptable_layers(placement)}
    base = sum(int(np.prod(s)) for s in arch.generator_tensor_shapes().values())
    total = sum(per_layer.values())
    return ParamCountReport(base, total, per_layer, total / base, r, arch.name)
