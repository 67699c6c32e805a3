"""Typeface network: shape propagation, skip handling, determinism."""

import numpy as np
import pytest

from stylemix.autodiff import ShapeError, Tensor
from stylemix.fontnet import FontNet, FontNetConfig, NetworkParams


class TestConfig:
    def test_spatial_chain_power_of_two(self):
        config = FontNetConfig(image_size=64)
        assert config.spatial_sizes == (64, 32, 16, 8, 4, 2, 1)
        assert config.depth == 7

    def test_spatial_chain_80(self):
        config = FontNetConfig(image_size=80)
        assert config.spatial_sizes == (80, 40, 20, 10, 5, 3, 2, 1)
        assert config.depth == 8

    def test_channel_sequences(self):
        config = FontNetConfig(image_size=64, base_channels=16)
        assert config.encoder_channels == (16, 32, 64, 128, 128, 128, 128)
        assert config.decoder_channels == (128, 128, 128, 64, 32, 16)
        assert config.code_dim == 128

    def test_channel_sequences_80(self):
        config = FontNetConfig(image_size=80, base_channels=64)
        assert config.encoder_channels == (64, 128, 256, 512, 512, 512, 512, 512)
        assert config.decoder_channels == (512, 512, 512, 512, 256, 128, 64)

    def test_rejects_unsupported_sizes(self):
        with pytest.raises(ValueError, match="image_size"):
            FontNetConfig(image_size=48)

    def test_mixer_tensor_is_cubic_in_code_dim(self):
        config = FontNetConfig(image_size=16, base_channels=4, ref_count=2)
        net = FontNet.initialize(config)
        assert net.params["mixer.tensor"].shape == (config.code_dim,) * 3


class TestNetworkParams:
    def test_names_unique(self):
        params = NetworkParams()
        params.add("a", np.zeros(2))
        with pytest.raises(ValueError, match="duplicate"):
            params.add("a", np.zeros(2))

    def test_every_tensor_requires_grad(self):
        net = FontNet.initialize(FontNetConfig(image_size=8, base_channels=2, ref_count=2))
        assert all(t.requires_grad for t in net.params.values())


@pytest.fixture(scope="module")
def micro_net():
    return FontNet.initialize(
        FontNetConfig(image_size=16, base_channels=4, ref_count=2), seed=3
    )


def _refs(rng, r=2, size=16, batch=1):
    return Tensor(rng.uniform(0.0, 1.0, size=(batch, r, size, size)))


class TestStyleEncode:
    def test_identical_sets_give_identical_codes(self, micro_net):
        rng = np.random.default_rng(0)
        x = _refs(rng)
        a = micro_net.style_encode(x)
        b = micro_net.style_encode(Tensor(x.data.copy()))
        assert np.array_equal(a.data, b.data)

    def test_reference_order_matters_in_general(self, micro_net):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(1, 2, 16, 16))
        a = micro_net.style_encode(Tensor(x))
        b = micro_net.style_encode(Tensor(x[:, ::-1]))
        assert not np.allclose(a.data, b.data)

    def test_code_shape_is_eight_c_at_64(self):
        net = FontNet.initialize(FontNetConfig(image_size=64, base_channels=16, ref_count=4))
        rng = np.random.default_rng(2)
        code = net.style_encode(Tensor(rng.uniform(size=(1, 4, 64, 64))))
        assert code.shape == (1, 128)

    def test_rejects_wrong_reference_count(self, micro_net):
        with pytest.raises(ShapeError, match="reference input"):
            micro_net.style_encode(Tensor(np.zeros((1, 3, 16, 16))))

    def test_rejects_wrong_image_size(self, micro_net):
        with pytest.raises(ShapeError, match="reference input"):
            micro_net.style_encode(Tensor(np.zeros((1, 2, 8, 8))))


class TestContentEncode:
    def test_skip_stack_length_and_sizes(self, micro_net):
        rng = np.random.default_rng(3)
        code, skips = micro_net.content_encode(_refs(rng))
        config = micro_net.config
        assert len(skips) == config.depth - 1
        sizes = [s.shape[2] for s in skips]
        assert sizes == sorted(sizes, reverse=True)
        assert sizes == list(config.spatial_sizes[:-1])
        assert code.shape == (1, config.code_dim)

    def test_identical_refs_identical_skips(self, micro_net):
        rng = np.random.default_rng(4)
        x = _refs(rng)
        _, a = micro_net.content_encode(x)
        _, b = micro_net.content_encode(Tensor(x.data.copy()))
        assert all(np.array_equal(s.data, t.data) for s, t in zip(a, b))


class TestDecode:
    def test_output_shape_and_range(self, micro_net):
        rng = np.random.default_rng(5)
        style = micro_net.style_encode(_refs(rng))
        content, skips = micro_net.content_encode(_refs(rng))
        image = micro_net.decode(micro_net.mix(style, content), skips)
        assert image.shape == (1, 1, 16, 16)
        assert (image.data > 0.0).all() and (image.data < 1.0).all()

    def test_zeroing_skips_changes_the_output(self, micro_net):
        rng = np.random.default_rng(6)
        style = micro_net.style_encode(_refs(rng))
        content, skips = micro_net.content_encode(_refs(rng))
        mixed = micro_net.mix(style, content)
        with_skips = micro_net.decode(mixed, skips)
        without = micro_net.decode(mixed, skips, zero_skips=True)
        assert np.abs(with_skips.data - without.data).mean() > 0.0

    def test_rejects_wrong_skip_count(self, micro_net):
        rng = np.random.default_rng(7)
        style = micro_net.style_encode(_refs(rng))
        content, skips = micro_net.content_encode(_refs(rng))
        with pytest.raises(ShapeError, match="skip"):
            micro_net.decode(micro_net.mix(style, content), skips[:-1])


class TestForwardGenerate:
    def test_deterministic(self, micro_net):
        rng = np.random.default_rng(8)
        sx, cx = _refs(rng), _refs(rng)
        a = micro_net.forward_generate(sx, cx)
        b = micro_net.forward_generate(Tensor(sx.data.copy()), Tensor(cx.data.copy()))
        assert np.array_equal(a.data, b.data)

    def test_swapping_roles_changes_the_output(self, micro_net):
        rng = np.random.default_rng(9)
        sx, cx = _refs(rng), _refs(rng)
        a = micro_net.forward_generate(sx, cx)
        b = micro_net.forward_generate(cx, sx)
        assert not np.allclose(a.data, b.data)

    def test_batched_forward(self, micro_net):
        rng = np.random.default_rng(10)
        out = micro_net.forward_generate(_refs(rng, batch=3), _refs(rng, batch=3),
                                         mode="train")
        assert out.shape == (3, 1, 16, 16)

    def test_80px_forward(self):
        net = FontNet.initialize(FontNetConfig(image_size=80, base_channels=2, ref_count=2))
        rng = np.random.default_rng(11)
        out = net.forward_generate(_refs(rng, size=80), _refs(rng, size=80))
        assert out.shape == (1, 1, 80, 80)


class TestStateRoundTrip:
    def test_rebuild_reproduces_outputs(self, micro_net):
        rng = np.random.default_rng(12)
        sx, cx = _refs(rng), _refs(rng)
        want = micro_net.forward_generate(sx, cx)
        rebuilt = FontNet.from_state(micro_net.state_arrays())
        got = rebuilt.forward_generate(sx, cx)
        assert np.array_equal(want.data, got.data)

    def test_rejects_mismatched_tensor_set(self, micro_net):
        state = dict(micro_net.state_arrays())
        state.pop("mixer.tensor")
        with pytest.raises(ValueError, match="missing"):
            FontNet.from_state(state)

    def test_rejects_non_font_checkpoint(self):
        with pytest.raises(ValueError, match="meta.font"):
            FontNet.from_state({"weights": np.zeros(3)})
