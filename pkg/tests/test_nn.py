import numpy as np
import pytest

from audit import mamba_block_params, transformer_layer_params
from nn import (CrossAttention, Dropout, Embedding, LayerNorm, Linear, SelfAttention, sincos_positions,
                sincos_positions_2d, sincos_table)
from nn.blocks import MambaBlock, TransformerLayer, mamba_block_forward, transformer_layer_forward
from tensor import ConfigError, Rng, ShapeError, Tensor, no_grad


class TestParameterCounts:
    def test_transformer_layer_at_encoder_width(self, rng):
        layer = TransformerLayer(768, 12, rng)
        assert layer.num_parameters() == 7_087_872
        assert transformer_layer_params(768) == 7_087_872

    def test_mamba_block_at_encoder_width(self, rng):
        block = MambaBlock(768, 64, rng)
        assert block.num_parameters() == 100_672
        assert mamba_block_params(768, 64) == 100_672

    def test_mamba_block_with_selective_mixer(self, rng):
        block = MambaBlock(32, 8, rng, inner_ssm=True, ssm_state=4)
        assert block.num_parameters() == mamba_block_params(32, 8, inner_ssm=True, state=4)

    def test_linear_without_bias(self, rng):
        assert Linear(5, 3, rng, bias=False).num_parameters() == 15


class TestLayers:
    def test_linear_rejects_wrong_width(self, rng):
        with pytest.raises(ShapeError):
            Linear(4, 2, rng)(Tensor(np.ones((3, 5))))

    def test_embedding_range(self, rng):
        table = Embedding(10, 4, rng)
        assert table(np.array([0, 9, 9])).shape == (3, 4)
        with pytest.raises(ShapeError):
            table(np.array([10]))

    def test_layer_norm_rejects_bad_eps(self):
        with pytest.raises(ConfigError):
            LayerNorm(4, eps=0.0)

    def test_dropout_is_identity_in_eval(self):
        drop = Dropout(0.5).eval()
        x = Tensor(np.ones((4, 4)))
        assert drop(x) is x

    def test_dropout_needs_a_stream_in_training(self):
        with pytest.raises(ConfigError):
            Dropout(0.5)(Tensor(np.ones(4)))

    def test_dropout_keeps_the_expectation(self):
        drop = Dropout(0.25)
        drop.set_rng(Rng(0))
        out = drop(Tensor(np.ones(20_000))).numpy()
        assert set(np.unique(out).tolist()) <= {0.0, 1.0 / 0.75}
        assert out.mean() == pytest.approx(1.0, abs=0.03)

    def test_dropout_probability_range(self):
        with pytest.raises(ConfigError):
            Dropout(1.0)


class TestAttention:
    def test_self_attention_rows_are_distributions(self, rng):
        attention = SelfAttention(8, 2, rng)
        out = attention(Tensor(rng.normal((5, 8))))
        assert out.shape == (5, 8)
        np.testing.assert_allclose(attention.last_attention.sum(axis=-1), 1.0)
        assert attention.last_attention.shape == (2, 5, 5)

    def test_heads_must_divide_width(self, rng):
        with pytest.raises(ConfigError):
            SelfAttention(10, 3, rng)

    def test_cross_attention_shapes(self, rng):
        attention = CrossAttention(8, 6, rng)
        out = attention(Tensor(rng.normal((3, 8))), Tensor(rng.normal((7, 8))), Tensor(rng.normal((7, 8))))
        assert out.shape == (3, 6)
        assert attention.last_attention.shape == (3, 7)

    def test_cross_attention_needs_one_value_per_key(self, rng):
        attention = CrossAttention(8, 6, rng)
        with pytest.raises(ShapeError):
            attention(Tensor(rng.normal((3, 8))), Tensor(rng.normal((7, 8))), Tensor(rng.normal((6, 8))))


class TestBlocks:
    def test_blocks_preserve_shape(self, rng):
        x = Tensor(rng.normal((6, 16)))
        assert TransformerLayer(16, 4, rng.split('t'), dropout=0.0)(x).shape == (6, 16)
        assert MambaBlock(16, 4, rng.split('m'), dropout=0.0)(x).shape == (6, 16)
        assert MambaBlock(16, 4, rng.split('s'), dropout=0.0, inner_ssm=True)(x).shape == (6, 16)

    def test_mamba_block_is_tokenwise_without_mixer(self, rng):
        block = MambaBlock(8, 4, rng, dropout=0.0)
        x = rng.normal((5, 8))
        whole = block(Tensor(x)).numpy()
        single = block(Tensor(x[2:3])).numpy()
        np.testing.assert_allclose(whole[2:3], single, rtol=1e-12)

    def test_zero_residual_branch_is_identity(self, rng):
        block = MambaBlock(8, 4, rng, dropout=0.0)
        block.up.weight.data[:] = 0.0
        x = rng.normal((3, 8))
        np.testing.assert_array_equal(block(Tensor(x)).numpy(), x)

    def test_reseeded_dropout_is_reproducible(self, rng):
        layer = TransformerLayer(8, 2, rng, dropout=0.5)
        x = Tensor(rng.normal((4, 8)))
        layer.reseed(Rng(5))
        first = layer(x).numpy()
        layer.reseed(Rng(5))
        np.testing.assert_array_equal(layer(x).numpy(), first)

    def test_forward_functions_switch_the_mode(self, rng):
        x = Tensor(rng.normal((4, 8)))
        layer = TransformerLayer(8, 2, rng.split('t'), dropout=0.5)
        block = MambaBlock(8, 4, rng.split('m'), dropout=0.5)
        np.testing.assert_array_equal(transformer_layer_forward(x, layer, training=False).numpy(),
                                      layer.eval()(x).numpy())
        np.testing.assert_array_equal(mamba_block_forward(x, block, training=False).numpy(), block(x).numpy())
        block.reseed(Rng(1))
        dropped = mamba_block_forward(x, block, training=True).numpy()
        assert block.training
        assert not np.array_equal(dropped, block.eval()(x).numpy())

    def test_mamba_block_dropout_keeps_the_expectation(self, rng):
        block = MambaBlock(4, 3, rng, dropout=0.5)
        x = Tensor(rng.normal((2, 4)))
        expected = mamba_block_forward(x, block, training=False).numpy()[0, 0]
        samples = []
        with no_grad():
            for seed in range(10_000):
                block.reseed(Rng(0).split(seed))
                samples.append(mamba_block_forward(x, block, training=True).numpy()[0, 0])
        samples = np.array(samples)
        standard_error = samples.std() / np.sqrt(len(samples))
        assert abs(samples.mean() - expected) <= 3.0 * standard_error


class TestModule:
    def test_parameter_names_follow_attribute_order(self, rng):
        names = [name for name, _ in TransformerLayer(8, 2, rng).named_parameters()]
        assert names[:2] == ['norm1.gamma', 'norm1.beta']
        assert 'attn.proj_q.weight' in names
        assert names[-1] == 'mlp.fc2.bias'

    def test_state_dict_round_trip(self, rng):
        source = MambaBlock(8, 4, rng.split('a'))
        target = MambaBlock(8, 4, rng.split('b'))
        target.load_state_dict(source.state_dict())
        for (name, p), (_, q) in zip(source.named_parameters(), target.named_parameters()):
            np.testing.assert_array_equal(p.data, q.data, err_msg=name)

    def test_state_dict_mismatches(self, rng):
        block = MambaBlock(8, 4, rng)
        state = block.state_dict()
        with pytest.raises(KeyError):
            block.load_state_dict({k: v for k, v in state.items() if k != 'up.bias'})
        with pytest.raises(ShapeError):
            block.load_state_dict({**state, 'up.bias': np.zeros(9)})

    def test_train_and_eval_reach_every_submodule(self, rng):
        layer = TransformerLayer(8, 2, rng).eval()
        assert not any(module.training for _, module in layer.named_modules())
        layer.train()
        assert all(module.training for _, module in layer.named_modules())


class TestPositions:
    def test_table_values(self):
        table = sincos_table(3, 4)
        np.testing.assert_allclose(table[0], [0.0, 1.0, 0.0, 1.0])
        np.testing.assert_allclose(table[1, :2], [np.sin(1.0), np.cos(1.0)])
        np.testing.assert_allclose(table[1, 2:], [np.sin(0.01), np.cos(0.01)])

    def test_grid_positions_are_distinct(self):
        grid = sincos_positions_2d(3, 3, 8).numpy()
        assert grid.shape == (9, 8)
        assert len({row.tobytes() for row in grid}) == 9

    def test_odd_width_is_rejected(self):
        with pytest.raises(ConfigError):
            sincos_table(4, 5)
        with pytest.raises(ConfigError):
            sincos_positions_2d(2, 2, 6)

    def test_sequence_positions_are_fixed(self):
        positions = sincos_positions(5, 6)
        assert positions.shape == (5, 6)
        assert not positions.requires_grad
        np.testing.assert_array_equal(positions.numpy(), sincos_table(5, 6))
        np.testing.assert_allclose(positions.numpy()[0], [0.0, 1.0] * 3)
