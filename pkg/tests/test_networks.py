import numpy as np
import pytest

from colora import autodiff as ad
from colora.adapters import init_adapter_set
from colora.arch import ArchSpec, SynthesisBlock, mirror_critic, preset
from colora.autodiff import Tensor
from colora.errors import ConfigError, FingerprintError, ShapeError
from colora.networks import (critic_forward, critic_weight_gain, generate, init_critic, init_generator,
                             mapping_forward, modulated_conv, sample_latents, synthesis_forward)

from conftest import check_grad


def tiny(rgb_skip=False, demodulate=False, layers=1):
    blocks = (SynthesisBlock(4, 6, 6, 3, layers), SynthesisBlock(8, 6, 4, 3, layers))
    return ArchSpec("tiny", 8, 8, 2, 8, blocks, mirror_critic(blocks, 0.5), rgb_skip=rgb_skip,
                    demodulate=demodulate)


@pytest.mark.parametrize("arch", [tiny(), tiny(rgb_skip=True, layers=2), tiny(demodulate=True)])
def test_shapes_and_range(arch):
    g = init_generator(arch, 0)
    img = generate(sample_latents(arch, 3, 1), g, noise_seed=2)
    assert img.shape == (3, 3, 8, 8)
    assert np.all(np.abs(img.data) <= 1)
    assert critic_forward(img, init_critic(arch, 0)).shape == (3, 1)


@pytest.mark.parametrize("name", ["desk", "desk-lite"])
def test_zero_init_adapters_are_bit_identical(name):
    arch = preset(name)
    g = init_generator(arch, 0)
    z = sample_latents(arch, 2, 5)
    s = init_adapter_set(arch, 1, (1.7, 0.3), seed=9)
    np.testing.assert_array_equal(mapping_forward(z, g).data, mapping_forward(z, g, s).data)
    np.testing.assert_array_equal(generate(z, g, None, 3).data, generate(z, g, s, 3).data)


def test_noise_seed_controls_output():
    arch = tiny()
    g = init_generator(arch, 0)
    z = sample_latents(arch, 2, 0)
    np.testing.assert_array_equal(generate(z, g, None, 1).data, generate(z, g, None, 1).data)
    assert not np.array_equal(generate(z, g, None, 1).data, generate(z, g, None, 2).data)


def test_adapters_change_output_once_trained():
    arch = tiny()
    g = init_generator(arch, 0)
    s = init_adapter_set(arch, 1, (1.0, 1.0), 0)
    for a in s.adapters.values():
        first = a.B if a.kind == "fc" else a.B_prime
        first.data = np.full_like(first.data, 0.5)
    z = sample_latents(arch, 2, 0)
    assert not np.array_equal(generate(z, g, None, 0).data, generate(z, g, s, 0).data)


def test_gradients_reach_only_adapters():
    arch = tiny()
    g = init_generator(arch, 0)
    s = init_adapter_set(arch, 1, (1.0, 1.0), 0)
    with ad.Tape() as tape:
        loss = ad.mean(generate(sample_latents(arch, 2, 0), g, s, 0))
    ad.backward(tape, loss)
    assert all(t.grad is None for t in g.parameters())
    assert all(p.grad is not None for p in s.parameters())


def test_generator_gradients_match_finite_differences(rng):
    arch = tiny(demodulate=True)
    with ad.precision("float64"):
        g = init_generator(arch, 0)
    z = sample_latents(arch, 2, 0)
    name = "synthesis.b1.conv0.weight"

    def build(w):
        tensors = dict(g.tensors)
        tensors[name] = w
        return generate(z, type(g)(arch, tensors), None, 4)

    check_grad(build, [g[name].data], tol=1e-4)


def test_modulated_conv_matches_per_sample_weights(rng):
    x = rng.standard_normal((2, 3, 5, 5))
    style = rng.standard_normal((2, 3))
    w = rng.standard_normal((4, 3, 3, 3))
    with ad.precision("float64"):
        out = modulated_conv(Tensor(x), Tensor(style), Tensor(w), demodulate=True).data
        for n in range(2):
            wn = w * style[n][None, :, None, None]
            wn = wn / np.sqrt(np.sum(wn ** 2, axis=(1, 2, 3), keepdims=True) + 1e-8)
            ref = ad.conv2d(Tensor(x[n:n + 1]), Tensor(wn)).data
            np.testing.assert_allclose(out[n:n + 1], ref, rtol=1e-10, atol=1e-12)


def test_critic_gain_scales_weights():
    arch = tiny()
    c = init_critic(arch, 0)
    gains = critic_weight_gain(c, 0.01)
    fan_in = np.prod(c["critic.b0.weight"].shape[1:])
    assert gains["critic.b0.weight"] == pytest.approx(1 / (0.01 * np.sqrt(fan_in)))
    img = Tensor(np.zeros((1, 3, 8, 8)))
    unit = critic_weight_gain(c, None)
    np.testing.assert_array_equal(critic_forward(img, c, unit).data, critic_forward(img, c).data)


def test_input_validation():
    arch = tiny()
    g = init_generator(arch, 0)
    with pytest.raises(ShapeError):
        mapping_forward(np.zeros((2, 5)), g)
    with pytest.raises(ShapeError):
        critic_forward(Tensor(np.zeros((1, 3, 4, 4))), init_critic(arch, 0))
    with pytest.raises(FingerprintError):
        synthesis_forward(Tensor(np.zeros((1, 8))), g, init_adapter_set(preset("desk-lite"), 1, (1, 1), 0))


def test_arch_validation_and_roundtrip():
    arch = preset("desk")
    assert ArchSpec.from_dict(arch.to_dict()) == arch
    assert arch.fingerprint() == preset("desk").fingerprint()
    assert arch.fingerprint() != preset("desk-lite").fingerprint()
    with pytest.raises(ConfigError):
        ArchSpec("bad", 8, 8, 1, 8, (SynthesisBlock(4, 4, 4), SynthesisBlock(16, 4, 4)),
                 mirror_critic((SynthesisBlock(4, 4, 4),)))
    with pytest.raises(ConfigError):
        preset("nope")


def test_weights_fingerprint_tracks_bytes():
    g = init_generator(tiny(), 0)
    fp = g.fingerprint()
    assert g.copy().fingerprint() == fp
    g["synthesis.const"].data[0, 0, 0] += 1
    assert g.fingerprint() != fp
