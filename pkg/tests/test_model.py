import numpy as np
import pytest
from pydantic import ValidationError

from audit import count_params
from harness import generate_synthetic
from masking import full_plan, sample_mask_plan
from model import (ABLATIONS, M3ET, LayerKind, ModalityBatch, ModelConfig, ablate, adaptive_pool_matrix,
                   denormalize_depth, detokenize, draw_plans, normalize_depth, patchify, tokenize_text, unpatchify)
from nn.blocks import MambaBlock
from tensor import ConfigError, Rng, ShapeError, Tensor


def toy_batch(cfg: ModelConfig, scenes: int = 2, seed: int = 0) -> ModalityBatch:
    return generate_synthetic(seed, scenes, cfg, 'tests').batch(list(range(scenes)), cfg)


def even_plan(cfg: ModelConfig, rng: Rng, text_visible=None):
    """Every visual modality keeps two of its four tokens."""
    counts = {m: cfg.tokens_per_modality for m in cfg.visual_modalities}
    return sample_mask_plan(counts, cfg.mask_budget, 1000.0, rng, text_visible)


class TestData:
    def test_patchify_layout(self):
        image = np.arange(16.0).reshape(4, 4)
        tokens = patchify(image, 2)
        np.testing.assert_array_equal(tokens[0], [0, 1, 4, 5])
        np.testing.assert_array_equal(tokens[1], [2, 3, 6, 7])
        np.testing.assert_array_equal(unpatchify(tokens, 2, 4, 4), image)

    def test_unpatchify_inverts_patchify(self, rng):
        image = rng.normal((32, 48, 3))
        np.testing.assert_array_equal(unpatchify(patchify(image, 16), 16, 32, 48, 3), image)

    def test_patch_must_divide_the_image(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((10, 10)), 4)

    def test_byte_tokens(self):
        ids, _ = tokenize_text('a red circle.', 16)
        assert ids[:3].tolist() == [97, 32, 114]
        assert detokenize(ids) == 'a red circle.'
        truncated, spans = tokenize_text('a red circle.', 5)
        assert detokenize(truncated) == 'a red'
        assert spans.spans == [(0, 5)]

    def test_depth_normalization_round_trip(self, rng):
        depth = rng.uniform((8, 8), 2.0, 10.0)
        normalized, stats = normalize_depth(depth, (0.0, 100.0))
        assert normalized.mean() == pytest.approx(0.0, abs=1e-12)
        assert normalized.std() == pytest.approx(1.0)
        np.testing.assert_allclose(denormalize_depth(normalized, stats), depth)

    def test_flat_depth_stays_finite(self):
        normalized, _ = normalize_depth(np.full((4, 4), 3.0))
        np.testing.assert_array_equal(normalized, 0.0)

    def test_batch_validation(self):
        with pytest.raises(ValidationError):
            ModalityBatch()
        with pytest.raises(ValidationError):
            ModalityBatch(rgb=np.zeros((2, 8, 8, 3)), text=np.zeros((3, 4), dtype=np.int64))
        with pytest.raises(ValidationError):
            ModalityBatch(rgb=np.zeros((1, 8, 8, 4)))

    def test_batch_against_config(self, toy):
        batch = toy_batch(toy)
        batch.check(toy)
        bad = batch.model_copy(update={'semseg': np.full_like(batch.semseg, toy.semseg_classes)})
        with pytest.raises(ShapeError):
            bad.check(toy)
        with pytest.raises(ConfigError):
            ModalityBatch(rgb=batch.rgb).check(toy)

    def test_select(self, toy):
        batch = toy_batch(toy, 3)
        picked = batch.select([2, 0])
        assert picked.size == 2
        np.testing.assert_array_equal(picked.text[0], batch.text[2])


class TestConfig:
    def test_full_size_layout(self):
        cfg = ModelConfig.paper()
        assert cfg.tokens_per_modality == 196
        assert cfg.mask_budget == 98
        kinds = cfg.layer_kinds()
        assert [i for i, k in enumerate(kinds) if k is LayerKind.MAMBA] == [1, 3, 5, 7, 9, 11]
        assert cfg.decoder_layout() == [LayerKind.TRANSFORMER] * 3 + [LayerKind.MAMBA] + [LayerKind.TRANSFORMER] * 2

    def test_presets(self):
        for name in ('paper', 'paper_flops_reference', 'desk', 'toy'):
            assert isinstance(ModelConfig.preset(name), ModelConfig)
        with pytest.raises(ConfigError):
            ModelConfig.preset('huge')

    def test_inconsistent_geometry(self):
        with pytest.raises(ConfigError):
            ModelConfig(image_size=30, patch=16)
        with pytest.raises(ConfigError):
            ModelConfig(mamba_layer_indices=[12])
        with pytest.raises(ConfigError):
            ModelConfig(image_size=32, mask_budget=13)

    def test_ablations(self):
        cfg = ModelConfig.toy()
        no_text = ablate(cfg, 'no_text')
        assert not no_text.text_active and no_text.loss_weights.text == 0.0
        assert 'text' not in no_text.decoder_sources()
        assert LayerKind.MAMBA not in ablate(cfg, 'no_mamba').layer_kinds()
        assert LayerKind.MAMBA not in ablate(cfg, 'no_mamba').decoder_layout()
        assert not ablate(cfg, 'no_cross_attention').fusion_enabled()
        with pytest.raises(ConfigError):
            ablate(cfg, 'no_decoder')


class TestForward:
    def test_training_loss(self, toy):
        model = M3ET(toy, Rng(0))
        batch = toy_batch(toy)
        loss, breakdown = model.forward_train(batch, draw_plans(toy, batch, Rng(1)))
        assert loss.is_finite()
        assert set(breakdown.components) == {'rgb', 'depth', 'semseg', 'text'}
        assert breakdown.total == pytest.approx(loss.item())

    def test_same_seed_same_model_and_loss(self, toy):
        batch = toy_batch(toy)
        plans = draw_plans(toy, batch, Rng(1))
        first = M3ET(toy, Rng(0)).forward_train(batch, plans)[0].item()
        assert M3ET(toy, Rng(0)).forward_train(batch, plans)[0].item() == first
        assert M3ET(toy, Rng(1)).forward_train(batch, plans)[0].item() != first

    def test_every_parameter_receives_a_gradient(self, toy):
        model = M3ET(toy, Rng(0))
        batch = toy_batch(toy, 1)
        text_visible = np.array([True] * 4 + [False] * 4)
        loss, _ = model.forward_train(batch, [even_plan(toy, Rng(2), text_visible)])
        loss.backward()
        dead = []
        for name, p in model.named_parameters():
            if p.grad is None:
                dead.append(name)
            # attention scores are invariant to the key bias
            elif not np.any(p.grad != 0.0) and not name.endswith('proj_k.bias'):
                dead.append(name)
        assert dead == []

    def test_hidden_tokens_do_not_reach_the_encoder(self, toy):
        model = M3ET(toy, Rng(0)).eval()
        batch = toy_batch(toy, 1)
        plan = even_plan(toy, Rng(3), np.ones(toy.text_len, dtype=bool))
        before = model.encode_sample(batch, 0, plan).latents.numpy()
        patches = patchify(batch.rgb[0], toy.patch)
        patches[plan.masked('rgb')] = 0.77
        changed = batch.model_copy(update={'rgb': unpatchify(patches, toy.patch, 16, 16, 3)[None]})
        np.testing.assert_array_equal(model.encode_sample(changed, 0, plan).latents.numpy(), before)

    def test_encoder_sees_only_visible_tokens(self, toy):
        model = M3ET(toy, Rng(0))
        batch = toy_batch(toy, 1)
        plan = even_plan(toy, Rng(3), np.array([True] * 3 + [False] * 5))
        encoded = model.encode_sample(batch, 0, plan)
        assert encoded.latents.shape == (toy.mask_budget + 3, toy.d_encoder)
        assert encoded.groups['text'] == (6, 9)

    def test_plan_must_match_the_batch(self, toy):
        model = M3ET(toy, Rng(0))
        batch = toy_batch(toy, 2)
        with pytest.raises(ShapeError):
            model.forward_train(batch, draw_plans(toy, batch, Rng(1))[:1])

    def test_task_sampling_trains_one_task(self, toy):
        cfg = toy.model_copy(update={'task_sampling': True})
        model = M3ET(cfg, Rng(0))
        batch = toy_batch(cfg)
        _, breakdown = model.forward_train(batch, draw_plans(cfg, batch, Rng(1)), rng=Rng(4))
        assert len(breakdown.components) == 1
        with pytest.raises(ConfigError):
            model.forward_train(batch, draw_plans(cfg, batch, Rng(1)))

    def test_prediction(self, toy):
        model = M3ET(toy, Rng(0))
        batch = toy_batch(toy, 1)
        plan = draw_plans(toy, batch, Rng(5))[0]
        prediction = model.predict(batch, 0, plan)
        assert prediction.rgb.shape == (16, 16, 3)
        assert prediction.depth.shape == (16, 16, 1)
        assert prediction.semseg.shape == (16, 16)
        assert prediction.text.shape == (toy.text_len,)
        visible = plan.visible_indices('rgb')
        np.testing.assert_array_equal(patchify(prediction.rgb, toy.patch)[visible],
                                      patchify(batch.rgb[0], toy.patch)[visible])
        assert model.training

    def test_full_plan_forward(self, toy):
        model = M3ET(toy, Rng(0))
        batch = toy_batch(toy, 1)
        counts = {m: toy.tokens_per_modality for m in toy.visual_modalities}
        encoded = model.encode_sample(batch, 0, full_plan(counts, text_length=toy.text_len))
        assert encoded.latents.shape[0] == 3 * toy.tokens_per_modality + toy.text_len

    @pytest.mark.parametrize('which', ABLATIONS)
    def test_ablated_models_train(self, toy, which):
        cfg = ablate(toy, which)
        model = M3ET(cfg, Rng(0))
        batch = toy_batch(cfg)
        loss, breakdown = model.forward_train(batch, draw_plans(cfg, batch, Rng(1)))
        loss.backward()
        assert loss.is_finite()
        if which == 'no_text':
            assert 'text' not in breakdown.components and 'text' not in model.decoder
        if which == 'no_mamba':
            assert not any(isinstance(m, MambaBlock) for _, m in model.named_modules())
        if which == 'no_cross_attention':
            assert model.fusion is None and model.decoder_attention is None

    def test_attention_only_encoder_is_permutation_equivariant(self, toy):
        model = M3ET(ablate(toy, 'no_mamba'), Rng(0)).eval()
        x = Rng(6).normal((7, toy.d_encoder))
        order = Rng(7).permutation(7)

        def encode(tokens: np.ndarray) -> np.ndarray:
            h = Tensor(tokens)
            for layer in model.encoder:
                h = layer(h)
            return model.encoder_norm(h).numpy()

        np.testing.assert_allclose(encode(x[order]), encode(x)[order], atol=1e-12)

    def test_untrained_text_is_ignored(self, toy):
        cfg = ablate(toy, 'no_text')
        model = M3ET(cfg, Rng(0))
        batch = toy_batch(toy)
        plans = draw_plans(cfg, batch, Rng(1))
        scrambled = batch.model_copy(update={'text': Rng(8).integers(0, toy.vocab, batch.text.shape)})
        first = model.forward_train(batch, plans)[0].item()
        assert model.forward_train(scrambled, plans)[0].item() == first

    def test_built_model_matches_the_counted_configuration(self, toy):
        for cfg in [toy] + [ablate(toy, which) for which in ABLATIONS]:
            counted = {b.name: b.params for b in count_params(cfg).blocks}
            built = {b.name: b.params for b in count_params(M3ET(cfg, Rng(0))).blocks}
            assert built == counted


def test_adaptive_pooling_rows_average():
    matrix = adaptive_pool_matrix(3, 7)
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0)
    assert (matrix > 0).sum(axis=1).tolist() == [3, 3, 3]
    np.testing.assert_array_equal(adaptive_pool_matrix(4, 4), np.eye(4))
