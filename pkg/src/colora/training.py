"""WGAN training with weight clipping and Adam.

One iteration is ``n_critic`` critic updates (each followed by clipping)
and one generator update. All fakes needed by the critic updates of an
iteration come from a single untaped generator forward, and real and fake
images share one critic forward per step.

Run randomness comes from ``SeedSequence(seed)``, split into independent
streams for adapter init, critic init and the sampling loop (batches with
replacement, latents, noise seeds).
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from colora import autodiff as ad
from colora.adapters import AdapterSet, init_adapter_set
from colora.arch import ArchSpec
from colora.autodiff import Tensor
from colora.errors import ColoraError, ConfigError, NumericalError, ShapeError
from colora.networks import Weights, critic_forward, critic_weight_gain, generate, init_critic, init_generator


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    batch_size: int = 4
    iterations: int = 1500
    n_critic: int = 5
    clip_c: float = 0.01
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 50
    critic_learning_rate: float | None = None  # None: same as learning_rate
    ema_decay: float = 0.0  # pretraining only: return an average of generator weights, 0 disables

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.clip_c > 0 and self.eps > 0):
            raise ConfigError("learning_rate, clip_c and eps must be positive")
        if self.batch_size < 1 or self.n_critic < 1 or self.log_every < 1:
            raise ConfigError("batch_size, n_critic and log_every must be >= 1")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.critic_learning_rate is not None and not self.critic_learning_rate > 0:
            raise ConfigError("critic_learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not 0 <= self.ema_decay < 1:
            raise ConfigError("ema_decay must lie in [0, 1)")


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray],
              lr: float, beta1: float, beta2: float, eps: float) -> None:
    """Bias-corrected Adam, in place. Non-finite gradients abort before any write."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam_step: parameter, gradient and moment counts differ")
    for p, g, m in zip(params, grads, state.m):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {p.shape}")
        if not np.isfinite(g).all():
            raise NumericalError("adam_step: non-finite gradient")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data = (p.data - step).astype(p.dtype, copy=False)


def _adam_update(state: AdamState, params: list[Tensor], cfg: TrainConfig, lr: float) -> None:
    adam_step(state, params, [p.grad for p in params], lr, cfg.beta1, cfg.beta2, cfg.eps)


# ---------------------------------------------------------------- losses


def wgan_losses(real_scores, fake_scores) -> tuple[float, float]:
    """``(mean(fake) - mean(real), -mean(fake))`` for score arrays."""
    real = np.asarray(real_scores.data if isinstance(real_scores, Tensor) else real_scores, dtype=np.float64)
    fake = np.asarray(fake_scores.data if isinstance(fake_scores, Tensor) else fake_scores, dtype=np.float64)
    if real.size == 0 or fake.size == 0:
        raise ValueError("wgan_losses: empty batch")
    if real.shape[0] != fake.shape[0]:
        raise ShapeError(f"wgan_losses: batch sizes differ {real.shape} vs {fake.shape}")
    return float(fake.mean() - real.mean()), float(-fake.mean())


def clip_weights(params: Sequence[Tensor], c: float) -> None:
    if not c > 0:
        raise ValueError(f"clip bound must be positive, got {c}")
    for p in params:
        np.clip(p.data, -c, c, out=p.data)


# ---------------------------------------------------------------- logging


LOG_HEADER = ("iteration", "loss_critic", "loss_gen", "wall_ms")


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(LOG_HEADER)
            for it, lc, lg, ms in self.rows:
                w.writerow([it, f"{lc:.6g}", f"{lg:.6g}", f"{ms:.6g}"])


# ---------------------------------------------------------------- loop


@dataclass
class _Streams:
    adapters: int
    critic: int
    loop: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "_Streams":
        a, c, l = np.random.SeedSequence(seed).spawn(3)
        return cls(int(a.generate_state(1)[0]), int(c.generate_state(1)[0]), np.random.default_rng(l))


def _fresh_critic(arch: ArchSpec, seed: int, clip_c: float) -> Weights:
    """Critic in clip-normalised form: stored weights Uniform(-c, c), zero biases."""
    critic = init_critic(arch, seed)
    rng = np.random.default_rng(seed)
    for name, t in critic.tensors.items():
        fill = rng.uniform(-clip_c, clip_c, t.shape) if name.endswith(".weight") else np.zeros(t.shape)
        t.data = fill.astype(t.dtype)
    return critic


def _run(gen: Weights, adapters: AdapterSet | None, trainable: list[Tensor], data: np.ndarray,
         cfg: TrainConfig, streams: _Streams, log: TrainLog | None,
         on_step: Callable[[int], None] | None = None) -> None:
    arch = gen.arch
    data = np.asarray(data, dtype=gen["synthesis.const"].dtype)
    r = arch.resolution
    if data.ndim != 4 or data.shape[1:] != (arch.img_channels, r, r):
        raise ShapeError(f"training data must be [n, {arch.img_channels}, {r}, {r}], got {data.shape}")
    if len(data) < 1:
        raise ValueError("training data is empty")

    critic = _fresh_critic(arch, streams.critic, cfg.clip_c)
    c_params = critic.parameters()
    gains = critic_weight_gain(critic, cfg.clip_c)
    c_opt = AdamState.zeros_like(c_params)
    g_opt = AdamState.zeros_like(trainable)
    rng = streams.loop
    c_lr = cfg.learning_rate if cfg.critic_learning_rate is None else cfg.critic_learning_rate
    b, nc = cfg.batch_size, cfg.n_critic
    # critic loss = mean(fake) - mean(real) as a weighted sum over the joint batch
    weights = np.concatenate([np.full(b, -1.0 / b), np.full(b, 1.0 / b)]).astype(data.dtype)[:, None]
    wvec = Tensor._wrap(weights)

    t0 = time.perf_counter()
    loss_c = loss_g = float("nan")
    it = 0
    try:
        for it in range(1, cfg.iterations + 1):
            for t in trainable:
                t.requires_grad = False
            for p in c_params:
                p.requires_grad = True
            z = rng.standard_normal((nc * b, arch.z_dim))
            with ad.no_tape():
                fakes = generate(z, gen, adapters, noise_seed=int(rng.integers(2**63))).data
            for k in range(nc):
                real = data[rng.integers(0, len(data), size=b)]
                joint = Tensor._wrap(np.concatenate([real, fakes[k * b:(k + 1) * b]]))
                with ad.Tape() as tape:
                    loss = ad.sum(ad.mul(critic_forward(joint, critic, gains), wvec))
                ad.backward(tape, loss)
                _adam_update(c_opt, c_params, cfg, c_lr)
                clip_weights(c_params, cfg.clip_c)
                loss_c = loss.item()

            for p in c_params:
                p.requires_grad = False
            for t in trainable:
                t.requires_grad = True
            z = rng.standard_normal((b, arch.z_dim))
            with ad.Tape() as tape:
                fake = generate(z, gen, adapters, noise_seed=int(rng.integers(2**63)))
                loss = ad.scale(ad.mean(critic_forward(fake, critic, gains)), -1.0)
            ad.backward(tape, loss)
            _adam_update(g_opt, trainable, cfg, cfg.learning_rate)
            loss_g = loss.item()
            if on_step is not None:
                on_step(it)

            if log is not None and it % cfg.log_every == 0:
                log.rows.append((it, loss_c, loss_g, (time.perf_counter() - t0) * 1e3))
    except NumericalError as exc:
        raise NumericalError(f"training diverged at iteration {it} "
                             f"(last loss_critic={loss_c:.6g}, loss_gen={loss_g:.6g}): {exc}") from exc
    finally:
        for t in trainable + c_params:
            t.requires_grad = False
            t.grad = None


def train_adaptation(base: Weights, data: np.ndarray, cfg: TrainConfig, alphas: tuple[float, float],
                     r: int = 1, activation: str = "relu", placement: str = "both",
                     log: TrainLog | None = None) -> AdapterSet:
    """Train fresh adapters on ``data`` over the frozen ``base`` against a fresh critic."""
    base.set_trainable(False)
    before = base.fingerprint()
    streams = _Streams.from_seed(cfg.seed)
    adapters = init_adapter_set(base.arch, r, alphas, streams.adapters, activation, placement)
    _run(base, adapters, adapters.parameters(), data, cfg, streams, log)
    if base.fingerprint() != before:
        raise ColoraError("frozen base weights changed during adaptation")
    return adapters


def train_base(arch: ArchSpec, data: np.ndarray, cfg: TrainConfig, log: TrainLog | None = None) -> Weights:
    """Pretrain every generator tensor on the source set."""
    streams = _Streams.from_seed(cfg.seed)
    gen = init_generator(arch, streams.adapters)
    if cfg.ema_decay == 0:
        _run(gen, None, gen.parameters(), data, cfg, streams, log)
        return gen
    avg = {k: t.data.astype(np.float64) for k, t in gen.tensors.items()}

    def update(it: int) -> None:
        # warm-up keeps the average from remembering the random init
        d = min(cfg.ema_decay, (1.0 + it) / (10.0 + it))
        for k, t in gen.tensors.items():
            avg[k] *= d
            avg[k] += (1.0 - d) * t.data

    _run(gen, None, gen.parameters(), data, cfg, streams, log, update)
    out = gen.copy()
    for k, t in out.tensors.items():
        t.data = avg[k].astype(t.dtype)
    return out
