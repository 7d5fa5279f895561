import numpy as np
import pytest

from colora import autodiff as ad
from colora.arch import ArchSpec, SynthesisBlock, mirror_critic
from colora.autodiff import Tensor
from colora.errors import ConfigError, NumericalError, ShapeError
from colora.networks import init_generator
from colora.training import (AdamState, TrainConfig, TrainLog, adam_step, clip_weights, train_adaptation,
                             train_base, wgan_losses)


def tiny():
    blocks = (SynthesisBlock(4, 6, 6), SynthesisBlock(8, 6, 4))
    return ArchSpec("tiny", 8, 8, 2, 8, blocks, mirror_critic(blocks, 0.5))


def shots(n=5, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (n, 3, 8, 8)).astype(np.float32)


# ---------------------------------------------------------------- losses and clipping


def test_wgan_losses_examples():
    assert wgan_losses([1.0, 1.0], [0.0, 0.0]) == (-1.0, -0.0)
    assert wgan_losses([0.3, 0.3], [0.3, 0.3]) == (0.0, -0.3)
    r, f = np.array([0.5, -1.0, 2.0]), np.array([1.0, 0.25, -0.5])
    assert wgan_losses(r, f)[0] == -wgan_losses(f, r)[0]
    with pytest.raises(ValueError):
        wgan_losses([], [])
    with pytest.raises(ShapeError):
        wgan_losses([1.0], [1.0, 2.0])


def test_clip_weights():
    t = Tensor([-5.0, 0.005, 5.0], dtype=np.float64)
    clip_weights([t], 0.01)
    np.testing.assert_array_equal(t.data, [-0.01, 0.005, 0.01])
    before = t.data.copy()
    clip_weights([t], 0.01)
    np.testing.assert_array_equal(t.data, before)
    with pytest.raises(ValueError):
        clip_weights([t], 0.0)


# ---------------------------------------------------------------- Adam


@pytest.mark.parametrize("beta1", [0.0, 0.9])
def test_adam_first_step_closed_form(beta1):
    p = Tensor([1.0], dtype=np.float64)
    st = AdamState.zeros_like([p])
    adam_step(st, [p], [np.array([2.0])], 0.1, beta1, 0.99, 1e-8)
    # bias-corrected m_hat = 2, v_hat = 4
    assert p.data[0] == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)
    assert st.t == 1


def test_adam_zero_gradient_keeps_params():
    p = Tensor([1.0, -2.0])
    st = AdamState.zeros_like([p])
    adam_step(st, [p], [np.zeros(2, dtype=np.float32)], 0.1, 0.0, 0.99, 1e-8)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st.t == 1


def test_adam_two_steps_match_reference():
    g1, g2 = 0.5, -1.5
    p = Tensor([0.0], dtype=np.float64)
    st = AdamState.zeros_like([p])
    for g in (g1, g2):
        adam_step(st, [p], [np.array([g])], 0.01, 0.9, 0.999, 1e-8)
    x, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate((g1, g2), 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert p.data[0] == pytest.approx(x, abs=1e-15)


def test_adam_non_finite_leaves_params_untouched():
    a, b = Tensor([1.0]), Tensor([2.0])
    st = AdamState.zeros_like([a, b])
    with pytest.raises(NumericalError):
        adam_step(st, [a, b], [np.array([1.0], np.float32), np.array([np.nan], np.float32)], 0.1, 0.0, 0.99, 1e-8)
    assert a.data[0] == 1.0 and b.data[0] == 2.0 and st.t == 0


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(iterations=-1)
    with pytest.raises(ConfigError):
        TrainConfig(beta2=1.0)


# ---------------------------------------------------------------- loops


def test_zero_iterations_returns_init():
    base = init_generator(tiny(), 0)
    s = train_adaptation(base, shots(), TrainConfig(iterations=0), (1.0, 0.5))
    assert s.deltas_zero()


def test_adaptation_freezes_base_and_is_deterministic():
    base = init_generator(tiny(), 0)
    fp = base.fingerprint()
    cfg = TrainConfig(iterations=6, seed=3, log_every=2)
    log = TrainLog()
    a = train_adaptation(base, shots(), cfg, (1.0, 0.5), log=log)
    b = train_adaptation(base, shots(), cfg, (1.0, 0.5))
    assert base.fingerprint() == fp
    assert a.bitwise_equal(b)
    assert not a.deltas_zero()
    assert [r[0] for r in log.rows] == [2, 4, 6]
    assert all(p.grad is None and not p.requires_grad for p in a.parameters())


def test_adaptation_rejects_wrong_data_shape():
    with pytest.raises(ShapeError):
        train_adaptation(init_generator(tiny(), 0), np.zeros((3, 3, 4, 4)), TrainConfig(iterations=1), (1, 1))


def test_critic_respects_clip_bound(monkeypatch):
    import colora.training as T

    seen = []
    orig = T.clip_weights

    def spy(params, c):
        orig(params, c)
        seen.append(max(float(np.max(np.abs(p.data))) for p in params))

    monkeypatch.setattr(T, "clip_weights", spy)
    train_adaptation(init_generator(tiny(), 0), shots(), TrainConfig(iterations=3, n_critic=2), (1, 1))
    assert len(seen) == 6
    assert max(seen) <= 0.01


def test_numerical_failure_reports_iteration(monkeypatch):
    import colora.training as T

    def boom(*a, **k):
        raise NumericalError("forced")

    monkeypatch.setattr(T, "adam_step", boom)
    with pytest.raises(NumericalError, match="iteration 1"):
        train_adaptation(init_generator(tiny(), 0), shots(), TrainConfig(iterations=2), (1, 1))


def test_train_base_seeded_and_zero_iterations():
    arch = tiny()
    cfg = TrainConfig(iterations=3, seed=1, learning_rate=1e-3)
    a = train_base(arch, shots(), cfg)
    b = train_base(arch, shots(), cfg)
    assert a.fingerprint() == b.fingerprint()
    untrained = train_base(arch, shots(), TrainConfig(iterations=0, seed=1))
    assert untrained.fingerprint() != a.fingerprint()
    assert all(not t.requires_grad for t in a.parameters())


def test_train_log_csv(tmp_path):
    log = TrainLog([(50, -0.5, 0.25, 1234.5)])
    log.write_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines() == [
        "iteration,loss_critic,loss_gen,wall_ms", "50,-0.5,0.25,1234.5"]


def test_float64_training_runs():
    with ad.precision("float64"):
        base = init_generator(tiny(), 0)
        s = train_adaptation(base, shots().astype(np.float64), TrainConfig(iterations=2), (1, 1))
    assert all(p.dtype == np.float64 for p in s.parameters())


def test_weight_average_returns_smoothed_copy(monkeypatch):
    import colora.training as T

    arch = tiny()
    snapshots = []
    orig = T._run

    def spy(gen, adapters, trainable, data, cfg, streams, log, on_step=None):
        def hook(it):
            on_step(it)
            snapshots.append({k: t.data.astype(np.float64) for k, t in gen.tensors.items()})
        return orig(gen, adapters, trainable, data, cfg, streams, log, hook)

    monkeypatch.setattr(T, "_run", spy)
    cfg = TrainConfig(iterations=4, seed=2, learning_rate=1e-3, ema_decay=0.9)
    out = train_base(arch, shots(), cfg)
    init = init_generator(arch, T._Streams.from_seed(2).adapters)
    avg = {k: t.data.astype(np.float64) for k, t in init.tensors.items()}
    for it, snap in enumerate(snapshots, 1):
        d = min(0.9, (1 + it) / (10 + it))
        for k in avg:
            avg[k] = d * avg[k] + (1 - d) * snap[k]
    for k, t in out.tensors.items():
        np.testing.assert_allclose(t.data, avg[k], rtol=1e-6, atol=1e-7)
    assert any(not np.array_equal(out[k].data, snapshots[-1][k].astype(out[k].dtype)) for k in avg)


def test_weight_average_validation():
    with pytest.raises(ConfigError):
        TrainConfig(ema_decay=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(ema_decay=-0.1)
