import itertools
import json

import numpy as np
import pytest

from panolayers.erp import PanoramaImage
from panolayers.layering import (
    AssetMask,
    LayerStack,
    align_layer_depth,
    asset_depth_statistic,
    build_layer_stack,
    complete_layer,
    extend_layer_mask,
    harmonic_fill,
    kmeans_cluster_assets,
    load_asset_masks,
    merge_layer_masks,
)


def _mask_from_depths(values):
    """Pack a value list into a 1-row mask + depth image."""
    n = len(values)
    depth = np.ones((1, n))
    depth[0, :] = values
    mask = np.ones((1, n), dtype=bool)
    return mask, depth


class TestDepthStatistic:
    def test_constant_region(self):
        mask, depth = _mask_from_depths([5, 5, 5, 5])
        assert asset_depth_statistic(mask, depth) == 5

    def test_nearest_rank_four_values(self):
        # ceil(0.75 * 4) = 3rd smallest
        mask, depth = _mask_from_depths([1, 2, 3, 4])
        assert asset_depth_statistic(mask, depth) == 3

    def test_singleton(self):
        mask, depth = _mask_from_depths([10])
        assert asset_depth_statistic(mask, depth) == 10

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            asset_depth_statistic(np.zeros((2, 2), bool), np.ones((2, 2)))

    def test_matches_sort_oracle_random(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 200))
            values = rng.uniform(0.1, 100, n)
            mask, depth = _mask_from_depths(values)
            expected = np.sort(values)[int(np.ceil(0.75 * n)) - 1]
            assert asset_depth_statistic(mask, depth) == expected


def _sse(values, labels):
    total = 0.0
    for lab in np.unique(labels):
        member = values[labels == lab]
        total += float(((member - member.mean()) ** 2).sum())
    return total


def _best_contiguous_sse(values, k):
    """Exhaustive enumeration over contiguous partitions of sorted values
    (optimal 1-D SSE clusters are contiguous)."""
    s = np.sort(values)
    n = len(s)
    best = np.inf
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = (0,) + cuts + (n,)
        sse = 0.0
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            seg = s[lo:hi]
            sse += float(((seg - seg.mean()) ** 2).sum())
        best = min(best, sse)
    return best


def _best_set_partition_sse(values, k):
    """Fully exhaustive set-partition enumeration (small n only)."""
    n = len(values)
    best = np.inf
    for assignment in itertools.product(range(k), repeat=n):
        if len(set(assignment)) != k:
            continue
        best = min(best, _sse(values, np.array(assignment)))
    return best


class TestKMeans:
    def test_spec_example(self):
        values = np.array([1.0, 1.1, 5.0, 5.2, 9.9])
        labels, k = kmeans_cluster_assets(values, 3)
        assert k == 3
        groups = {lab: set(np.nonzero(labels == lab)[0]) for lab in range(3)}
        # cluster 0 is farthest (largest mean)
        assert groups[0] == {4}
        assert groups[1] == {2, 3}
        assert groups[2] == {0, 1}

    def test_single_cluster(self):
        labels, k = kmeans_cluster_assets([3.0, 1.0, 8.0], 1)
        assert k == 1
        assert set(labels) == {0}

    def test_reduction_warns(self, caplog):
        import logging

        with caplog.at_level(logging.WARNING):
            labels, k = kmeans_cluster_assets([1.0, 2.0], 5)
        assert k == 2
        assert any("reducing" in r.message for r in caplog.records)

    def test_far_to_near_label_order(self, rng):
        values = rng.uniform(1, 50, 12)
        labels, k = kmeans_cluster_assets(values, 4)
        means = [values[labels == lab].mean() for lab in range(k)]
        assert all(means[i] >= means[i + 1] for i in range(k - 1))

    def test_matches_contiguous_enumeration(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 11))
            k = int(rng.integers(1, min(n, 4) + 1))
            values = rng.uniform(0, 20, n)
            labels, _ = kmeans_cluster_assets(values, k)
            assert _sse(values, labels) == pytest.approx(
                _best_contiguous_sse(values, k), abs=1e-9
            )

    def test_matches_full_set_partition_small(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 7))
            k = int(rng.integers(1, min(n, 3) + 1))
            values = rng.uniform(0, 10, n)
            labels, _ = kmeans_cluster_assets(values, k)
            assert _sse(values, labels) == pytest.approx(
                _best_set_partition_sse(values, k), abs=1e-9
            )


def _asset(idx, pixels, shape=(8, 16), category="thing", background=False):
    mask = np.zeros(shape, dtype=bool)
    for y, x in pixels:
        mask[y, x] = True
    return AssetMask(id=idx, mask=mask, category=category, background=background)


class TestMergeMasks:
    def test_same_cluster_union(self):
        a = _asset(1, [(0, 0)])
        b = _asset(2, [(1, 1)])
        merged = merge_layer_masks([a, b], [0, 0])
        assert len(merged) == 1
        assert merged[0].mask.sum() == 2
        assert merged[0].mask[0, 0] and merged[0].mask[1, 1]

    def test_disjoint_clusters_partition(self):
        a = _asset(1, [(0, 0)])
        b = _asset(2, [(1, 1)])
        merged = merge_layer_masks([a, b], [0, 1])
        assert len(merged) == 2
        assert not (merged[0].mask & merged[1].mask).any()

    def test_background_excluded(self):
        a = _asset(1, [(0, 0)])
        sky = _asset(2, [(1, 1)], category="sky", background=True)
        merged = merge_layer_masks([a, sky], [0, 0])
        assert len(merged) == 1
        assert not merged[0].mask[1, 1]


class TestExtendMask:
    def test_radius_zero_identity(self, rng):
        mask = rng.uniform(size=(8, 16)) > 0.7
        np.testing.assert_array_equal(extend_layer_mask(mask, 0), mask)

    def test_unit_disk_five_pixels(self):
        mask = np.zeros((9, 18), dtype=bool)
        mask[4, 9] = True
        out = extend_layer_mask(mask, 1)
        assert out.sum() == 5
        assert out[4, 9] and out[3, 9] and out[5, 9] and out[4, 8] and out[4, 10]

    def test_wraparound_left_edge(self):
        mask = np.zeros((4, 8), dtype=bool)
        mask[2, 0] = True
        out = extend_layer_mask(mask, 1)
        assert out[2, 7]  # dilation crosses to the right edge

    def test_matches_direct_dilation_oracle(self, rng):
        mask = rng.uniform(size=(10, 20)) > 0.85
        if not mask.any():
            mask[3, 5] = True
        r = 2
        out = extend_layer_mask(mask, r)
        h, w = mask.shape
        expected = np.zeros_like(mask)
        ys, xs = np.nonzero(mask)
        for y, x in zip(ys, xs):
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if dy * dy + dx * dx <= r * r and 0 <= y + dy < h:
                        expected[y + dy, (x + dx) % w] = True
        np.testing.assert_array_equal(out, expected)


class TestCompleteLayer:
    def test_empty_mask_noop(self, rng):
        rgb = rng.uniform(size=(8, 16, 3))
        out = complete_layer(rgb, np.zeros((8, 16), bool))
        np.testing.assert_array_equal(out, rgb)

    def test_constant_panorama_stays_constant(self, rng):
        rgb = np.full((8, 16, 3), 0.37)
        mask = rng.uniform(size=(8, 16)) > 0.6
        out = complete_layer(rgb, mask)
        np.testing.assert_allclose(out, 0.37, atol=1e-9)

    def test_external_passthrough_bit_exact(self, rng):
        rgb = rng.uniform(size=(8, 16, 3))
        external = rng.uniform(size=(8, 16, 3))
        mask = rng.uniform(size=(8, 16)) > 0.5
        out = complete_layer(rgb, mask, external)
        np.testing.assert_array_equal(out[mask], external[mask])
        np.testing.assert_array_equal(out[~mask], rgb[~mask])

    def test_external_dimension_mismatch(self, rng):
        rgb = rng.uniform(size=(8, 16, 3))
        with pytest.raises(ValueError):
            complete_layer(rgb, np.ones((8, 16), bool), rng.uniform(size=(4, 8, 3)))

    def test_unmasked_pixels_bit_exact(self, rng):
        rgb = rng.uniform(size=(12, 24, 3))
        mask = np.zeros((12, 24), bool)
        mask[4:8, 6:12] = True
        out = complete_layer(rgb, mask)
        np.testing.assert_array_equal(out[~mask], rgb[~mask])

    def test_fill_respects_maximum_principle(self, rng):
        rgb = rng.uniform(size=(12, 24, 3))
        mask = np.zeros((12, 24), bool)
        mask[4:8, 6:12] = True
        out = complete_layer(rgb, mask)
        assert out[mask].min() >= rgb[~mask].min() - 1e-9
        assert out[mask].max() <= rgb[~mask].max() + 1e-9

    def test_full_mask_rejected(self, rng):
        with pytest.raises(ValueError):
            harmonic_fill(rng.uniform(size=(4, 8)), np.ones((4, 8), bool))

    def test_harmonic_fill_idempotent(self, rng):
        values = rng.uniform(size=(10, 20))
        mask = np.zeros((10, 20), bool)
        mask[3:6, 4:9] = True
        filled = harmonic_fill(values, mask)
        again = harmonic_fill(filled, np.zeros((10, 20), bool))
        np.testing.assert_array_equal(filled, again)


class TestAlignDepth:
    def test_constant_boundary_fill(self):
        depth = np.full((8, 16), 5.0)
        mask = np.zeros((8, 16), bool)
        mask[3:5, 6:10] = True
        out = align_layer_depth(mask, depth, occluder_stat=3.0)
        np.testing.assert_allclose(out, 5.0)

    def test_clamp_dominates(self):
        depth = np.full((8, 16), 2.0)
        mask = np.zeros((8, 16), bool)
        mask[3:5, 6:10] = True
        out = align_layer_depth(mask, depth, occluder_stat=3.0)
        np.testing.assert_allclose(out[mask], 3.0)
        np.testing.assert_allclose(out[~mask], 2.0)

    def test_empty_mask_noop(self, rng):
        depth = rng.uniform(1, 5, (8, 16))
        out = align_layer_depth(np.zeros((8, 16), bool), depth, 1.0)
        np.testing.assert_array_equal(out, depth)

    def test_full_mask_rejected(self):
        with pytest.raises(ValueError):
            align_layer_depth(np.ones((4, 8), bool), np.ones((4, 8)), 1.0)

    def test_output_at_least_stat_inside_mask(self, rng):
        depth = rng.uniform(1, 10, (10, 20))
        mask = np.zeros((10, 20), bool)
        mask[2:7, 5:15] = True
        stat = 4.0
        out = align_layer_depth(mask, depth, stat)
        assert out[mask].min() >= stat
        np.testing.assert_array_equal(out[~mask], depth[~mask])


def _synthetic_inputs(n_assets=3, h=16, w=32):
    rgb = np.linspace(0, 1, h * w * 3).reshape(h, w, 3)
    depth = np.full((h, w), 10.0)
    assets = []
    for i in range(n_assets):
        mask = np.zeros((h, w), bool)
        mask[2 + i * 3 : 4 + i * 3, 4 + i * 8 : 10 + i * 8] = True
        depth[mask] = 2.0 + 2.5 * i
        assets.append(AssetMask(id=i + 1, mask=mask, category="box"))
    return PanoramaImage(rgb, depth), assets


class TestBuildStack:
    def test_zero_assets_single_layer(self):
        pano, _ = _synthetic_inputs(0)
        stack = build_layer_stack(pano, [], 3)
        assert len(stack) == 1
        np.testing.assert_array_equal(stack.rgbs[0], pano.rgb)
        np.testing.assert_array_equal(stack.depths[0], pano.depth)

    def test_three_assets_three_layers_gives_four_panoramas(self):
        pano, assets = _synthetic_inputs(3)
        stack = build_layer_stack(pano, assets, 3, extend_radius=1)
        assert len(stack) == 4
        assert stack.n_asset_layers == 3

    def test_reference_is_last_and_untouched(self):
        pano, assets = _synthetic_inputs(2)
        stack = build_layer_stack(pano, assets, 2, extend_radius=1)
        np.testing.assert_array_equal(stack.rgbs[-1], pano.rgb)
        np.testing.assert_array_equal(stack.depths[-1], pano.depth)

    def test_layer_stats_non_increasing(self):
        pano, assets = _synthetic_inputs(3)
        stack = build_layer_stack(pano, assets, 3, extend_radius=1)
        stats = stack.layer_stats
        assert all(stats[i] >= stats[i + 1] for i in range(len(stats) - 1))

    def test_external_completion_passthrough(self, rng):
        pano, assets = _synthetic_inputs(1)
        external = rng.uniform(size=pano.rgb.shape)
        stack = build_layer_stack(
            pano, assets, 1, extend_radius=1, external_rgb={0: external}
        )
        ext_mask = stack.extended_masks[0]
        np.testing.assert_array_equal(stack.rgbs[0][ext_mask], external[ext_mask])

    def test_background_assets_ignored(self):
        pano, assets = _synthetic_inputs(2)
        sky = AssetMask(
            id=99, mask=np.ones(pano.depth.shape, bool), category="sky", background=True
        )
        stack = build_layer_stack(pano, assets + [sky], 2, extend_radius=1)
        assert stack.n_asset_layers == 2

    def test_depth_behind_occluder(self):
        pano, assets = _synthetic_inputs(1)
        stack = build_layer_stack(pano, assets, 1, extend_radius=1)
        ext = stack.extended_masks[0]
        assert stack.depths[0][ext].min() >= stack.layer_stats[0] - 1e-12

    def test_save_load_round_trip(self, tmp_path):
        pano, assets = _synthetic_inputs(2)
        stack = build_layer_stack(pano, assets, 2, extend_radius=1)
        stack.save(tmp_path / "stack")
        loaded = LayerStack.load(tmp_path / "stack")
        assert len(loaded) == len(stack)
        assert loaded.n_asset_layers == stack.n_asset_layers
        for a, b in zip(stack.depths, loaded.depths):
            np.testing.assert_allclose(a, b, rtol=1e-6)  # float32 pfm
        for a, b in zip(stack.masks, loaded.masks):
            np.testing.assert_array_equal(a.mask, b.mask)


def test_load_asset_masks(tmp_path):
    from panolayers import imageio

    labels = np.zeros((6, 12), np.int32)
    labels[1:3, 2:5] = 1
    labels[4:6, 8:11] = 7
    imageio.save_label_map(tmp_path / "labels.png", labels)
    meta = {
        "1": {"category": "tree", "background": False},
        "7": {"category": "sky", "background": True},
    }
    (tmp_path / "labels.json").write_text(json.dumps(meta))
    assets = load_asset_masks(tmp_path / "labels.png", tmp_path / "labels.json")
    assert len(assets) == 2
    assert assets[0].id == 1 and not assets[0].background
    assert assets[1].id == 7 and assets[1].background
    assert assets[0].mask.sum() == 6
