"""Mask-guided visual features: grid binning, masked pooling, token
masking, crops, fusion, and the per-image backbone cache."""

import numpy as np
import pytest

from grounding_kit.core import MaskProposal
from grounding_kit.errors import EmptyMask, ShapeMismatch
from grounding_kit.visual import (
    FeatureCache,
    MaskingConfig,
    crop_to_mask,
    global_local_visual_feature,
    global_visual_feature,
    local_visual_feature,
    mask_bbox,
    masked_attention_pool,
    resize_mask_to_grid,
    token_masked_class_feature,
)

from conftest import random_image, rect_mask


def _grid_oracle(bits, grid_shape):
    """Per-cell pixel OR with explicit edge arithmetic."""
    H, W = bits.shape
    gh, gw = grid_shape
    out = np.zeros((gh, gw), dtype=np.uint8)
    for i in range(gh):
        for j in range(gw):
            r0, r1 = (i * H) // gh, ((i + 1) * H) // gh
            c0, c1 = (j * W) // gw, ((j + 1) * W) // gw
            r1 = max(r1, r0 + 1)
            c1 = max(c1, c0 + 1)
            out[i, j] = 1 if bits[r0:r1, c0:c1].any() else 0
    return out


class TestResizeMaskToGrid:
    def test_all_ones(self):
        gm = resize_mask_to_grid(MaskProposal(bits=np.ones((4, 4))), (2, 2))
        assert np.array_equal(gm, np.ones((2, 2)))

    def test_single_pixel_origin(self):
        bits = np.zeros((4, 4))
        bits[0, 0] = 1
        gm = resize_mask_to_grid(MaskProposal(bits=bits), (2, 2))
        assert np.array_equal(gm, [[1, 0], [0, 0]])

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyMask):
            resize_mask_to_grid(MaskProposal(bits=np.zeros((4, 4))), (2, 2))

    def test_matches_per_cell_or_oracle(self, rng):
        for _ in range(30):
            H = int(rng.integers(5, 40))
            W = int(rng.integers(5, 40))
            m = MaskProposal(bits=(rng.random((H, W)) < 0.2))
            if m.is_empty():
                continue
            gm = resize_mask_to_grid(m, (7, 7))
            assert np.array_equal(gm, _grid_oracle(m.bits, (7, 7)))

    def test_nonempty_mask_never_vanishes(self, rng):
        for _ in range(50):
            bits = np.zeros((64, 64))
            bits[int(rng.integers(0, 64)), int(rng.integers(0, 64))] = 1
            gm = resize_mask_to_grid(MaskProposal(bits=bits), (7, 7))
            assert gm.sum() >= 1


class TestMaskedAttentionPool:
    def test_out_of_mask_cells_ignored(self, residual_pair, rng):
        vh, _ = residual_pair
        gm = (rng.random((7, 7)) < 0.4).astype(np.uint8)
        gm[0, 0] = 1
        grid_a = rng.standard_normal((vh.channels, 7, 7))
        grid_b = grid_a.copy()
        grid_b[:, gm == 0] = rng.standard_normal((vh.channels, int((gm == 0).sum())))
        out_a = masked_attention_pool(vh, grid_a, gm)
        out_b = masked_attention_pool(vh, grid_b, gm)
        assert np.array_equal(out_a, out_b)

    def test_all_ones_mask_is_vanilla_pool(self, residual_pair, rng):
        vh, _ = residual_pair
        grid = rng.standard_normal((vh.channels, 7, 7))
        assert np.array_equal(
            masked_attention_pool(vh, grid, np.ones((7, 7))), vh.attention_pool(grid)
        )

    def test_empty_grid_mask_rejected(self, residual_pair, rng):
        vh, _ = residual_pair
        with pytest.raises(EmptyMask):
            masked_attention_pool(vh, rng.standard_normal((vh.channels, 7, 7)), np.zeros((7, 7)))

    def test_full_grid_query_variant_differs(self, residual_pair, rng):
        vh, _ = residual_pair
        gm = np.zeros((7, 7), dtype=np.uint8)
        gm[2:4, 2:4] = 1
        grid = rng.standard_normal((vh.channels, 7, 7))
        in_mask = masked_attention_pool(vh, grid, gm)
        full = masked_attention_pool(vh, grid, gm, full_grid_query=True)
        assert not np.allclose(in_mask, full)


class TestGlobalFeature:
    def test_all_ones_mask_identity(self, residual_pair, vit_pair, rng):
        img = random_image(rng)
        full = MaskProposal(bits=np.ones(img.shape))
        for vh, _ in (residual_pair, vit_pair):
            got = global_visual_feature(vh, img, full)
            vanilla = vh.encode_image(img)
            assert np.linalg.norm(got - vanilla) <= 1e-5 * np.linalg.norm(vanilla)

    def test_zero_mask_layers_is_exact_vanilla(self, vit_pair, rng):
        vh, _ = vit_pair
        img = random_image(rng)
        m = rect_mask(64, 64, 5, 5, 30, 40)
        got = global_visual_feature(vh, img, m, MaskingConfig(mask_layers=0))
        assert np.array_equal(got, vh.encode_image(img))

    def test_empty_mask_rejected(self, vit_pair, rng):
        vh, _ = vit_pair
        with pytest.raises(EmptyMask):
            global_visual_feature(vh, random_image(rng), MaskProposal(bits=np.zeros((64, 64))))

    def test_boundary_perturbation_invariance(self, vit_pair, rng):
        vh, _ = vit_pair
        img = random_image(rng)
        m = rect_mask(64, 64, 10, 10, 40, 50)
        gm = resize_mask_to_grid(m, vh.feature_grid_shape)
        out_tokens = np.flatnonzero(gm.reshape(-1) == 0) + 1
        cfg = MaskingConfig(mask_layers=vh.layer_count)
        tokens = vh.forward_prefix(img, vh.layer_count)
        base = token_masked_class_feature(vh, tokens, gm, cfg)

        def perturb(layer_index, toks):
            toks = toks.copy()
            toks[out_tokens] += rng.standard_normal((len(out_tokens), toks.shape[1])) * 7.0
            return toks

        pert = token_masked_class_feature(vh, tokens, gm, cfg, boundary_hook=perturb)
        assert np.max(np.abs(base - pert)) <= 1e-9

    def test_single_application_lets_tokens_regenerate(self, vit_pair, rng):
        vh, _ = vit_pair
        img = random_image(rng)
        m = rect_mask(64, 64, 10, 10, 40, 50)
        gm = resize_mask_to_grid(m, vh.feature_grid_shape)
        tokens = vh.forward_prefix(img, 3)
        always = token_masked_class_feature(vh, tokens, gm, MaskingConfig(mask_layers=3))
        once = token_masked_class_feature(
            vh, tokens, gm, MaskingConfig(mask_layers=3, reapply_per_layer=False)
        )
        assert not np.allclose(always, once)


class TestCrop:
    def test_full_mask_identity(self, rng):
        img = random_image(rng, 10, 10)
        out = crop_to_mask(img, MaskProposal(bits=np.ones((10, 10))))
        assert np.array_equal(out.pixels, img.pixels)

    def test_left_half_bbox_and_padding(self, rng):
        img = random_image(rng, 10, 10)
        m = rect_mask(10, 10, 0, 0, 10, 5)
        assert mask_bbox(m) == (0, 0, 10, 5)
        out = crop_to_mask(img, m)
        assert out.pixels.shape == (10, 10, 3)
        occupied = np.nonzero(out.pixels.any(axis=(0, 2)))[0]
        # 5 columns centered: floor((10-5)/2) = 2 on the left
        assert occupied.min() >= 2 and occupied.max() <= 6
        assert np.array_equal(out.pixels[:, 2:7], img.pixels[:, 0:5])

    def test_single_pixel(self, rng):
        img = random_image(rng, 8, 8)
        bits = np.zeros((8, 8))
        bits[3, 6] = 1
        out = crop_to_mask(img, MaskProposal(bits=bits))
        assert out.pixels.shape == (1, 1, 3)
        assert np.array_equal(out.pixels[0, 0], img.pixels[3, 6])

    def test_background_zeroed(self, rng):
        img = random_image(rng, 12, 12)
        m = rect_mask(12, 12, 2, 2, 6, 10)
        out = crop_to_mask(img, m)
        # 4x8 crop pads to 8x8 with the content vertically centered
        assert out.pixels.shape == (8, 8, 3)
        assert np.array_equal(out.pixels[2:6, 0:8], img.pixels[2:6, 2:10])
        assert not out.pixels[:2].any() and not out.pixels[6:].any()

    def test_empty_mask_rejected(self, rng):
        with pytest.raises(EmptyMask):
            crop_to_mask(random_image(rng), MaskProposal(bits=np.zeros((64, 64))))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            crop_to_mask(random_image(rng, 10, 10), MaskProposal(bits=np.ones((4, 4))))


class TestLocalAndFusion:
    def test_full_mask_equals_encode_image(self, residual_pair, rng):
        vh, _ = residual_pair
        img = random_image(rng)
        got = local_visual_feature(vh, img, MaskProposal(bits=np.ones(img.shape)))
        vanilla = vh.encode_image(img)
        assert np.linalg.norm(got - vanilla) <= 1e-5 * np.linalg.norm(vanilla)

    def test_deterministic(self, vit_pair, rng):
        vh, _ = vit_pair
        img = random_image(rng)
        m = rect_mask(64, 64, 4, 4, 30, 30)
        assert np.array_equal(local_visual_feature(vh, img, m), local_visual_feature(vh, img, m))

    def test_local_differs_from_global_for_half_mask(self, residual_pair, rng):
        vh, _ = residual_pair
        img = random_image(rng)
        half = rect_mask(64, 64, 0, 0, 64, 32)
        assert not np.allclose(
            local_visual_feature(vh, img, half), global_visual_feature(vh, img, half)
        )

    def test_alpha_extremes(self, vit_pair, rng):
        vh, _ = vit_pair
        img = random_image(rng)
        m = rect_mask(64, 64, 8, 8, 40, 48)
        feats1 = global_local_visual_feature(vh, img, m, 1.0)
        assert np.array_equal(feats1.fused, feats1.global_context)
        feats0 = global_local_visual_feature(vh, img, m, 0.0)
        assert np.array_equal(feats0.fused, feats0.local_context)
        assert np.array_equal(feats0.local_context, local_visual_feature(vh, img, m))


class TestFeatureCache:
    def test_disk_cache_round_trip(self, residual_pair, rng, tmp_path):
        vh, _ = residual_pair
        img = random_image(rng)
        cache = FeatureCache(cache_dir=str(tmp_path))
        first = cache.backbone_grid(vh, img)
        files = list(tmp_path.glob("*.npy"))
        assert len(files) == 1
        fresh = FeatureCache(cache_dir=str(tmp_path))
        again = fresh.backbone_grid(vh, img)
        assert np.array_equal(first, again)

    def test_env_var_honored(self, residual_pair, rng, tmp_path, monkeypatch):
        monkeypatch.setenv("GROUNDING_KIT_CACHE", str(tmp_path))
        vh, _ = residual_pair
        FeatureCache().backbone_grid(vh, random_image(rng))
        assert list(tmp_path.glob("*.npy"))

    def test_cached_arrays_read_only(self, vit_pair, rng):
        vh, _ = vit_pair
        cache = FeatureCache()
        tokens = cache.boundary_tokens(vh, random_image(rng), 3)
        with pytest.raises(ValueError):
            tokens[0, 0] = 1.0
