import numpy as np
import pytest

from panolayers.erp import pixel_to_angles, spherical_to_cartesian
from panolayers.pointcloud import (
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_N_MAX,
    GridHashParams,
    PointCloud,
    downsample,
    grid_hash,
    lift_panorama,
    load_ply,
    remove_stretched_outliers,
    save_ply,
)


def _random_cloud(rng, n, spread=5.0, layers=1):
    return PointCloud(
        positions=rng.uniform(-spread, spread, (n, 3)),
        colors=rng.uniform(0, 1, (n, 3)),
        layer_ids=rng.integers(0, layers, n).astype(np.int32),
        source_pixels=np.zeros((n, 2), np.int32),
    )


def brute_force_outlier_filter(pc, beta1, beta2, radius):
    """O(n^2) nearest-neighbor pass + dict-based grid-cell counting."""
    n = len(pc)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pos = pc.positions
    if n == 1:
        return np.zeros(0, dtype=np.int64)
    d2 = np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    nn = np.sqrt(d2.min(axis=1))
    keep1 = np.nonzero(nn <= beta1)[0]
    cells = {}
    for i in keep1:
        key = tuple(np.floor(pos[i] / radius).astype(np.int64))
        cells.setdefault(key, []).append(i)
    keep2 = [i for i in keep1 if len(cells[tuple(np.floor(pos[i] / radius).astype(np.int64))]) >= beta2]
    return np.array(sorted(keep2), dtype=np.int64)


class TestLift:
    def test_two_by_one_composition_contract(self):
        rgb = np.array([[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]])
        depth = np.ones((1, 2))
        pc = lift_panorama(rgb, depth)
        assert len(pc) == 2
        for k, (u, v) in enumerate([(0, 0), (1, 0)]):
            theta, phi = pixel_to_angles(u, v, 2, 1)
            expected = spherical_to_cartesian(theta, phi, 1.0)
            np.testing.assert_allclose(pc.positions[k], expected, atol=1e-15)
        np.testing.assert_array_equal(pc.source_pixels, [[0, 0], [1, 0]])

    def test_constant_depth_norms(self, rng):
        h, w = 8, 16
        rgb = rng.uniform(size=(h, w, 3))
        depth = np.full((h, w), 4.2)
        pc = lift_panorama(rgb, depth)
        np.testing.assert_allclose(np.linalg.norm(pc.positions, axis=1), 4.2, rtol=1e-9)

    def test_empty_mask_gives_empty_cloud(self, rng):
        pc = lift_panorama(
            rng.uniform(size=(4, 8, 3)), np.ones((4, 8)), mask=np.zeros((4, 8), bool)
        )
        assert len(pc) == 0

    def test_missing_depth_rejected(self, rng):
        depth = np.ones((4, 8))
        depth[2, 3] = np.nan
        with pytest.raises(ValueError):
            lift_panorama(rng.uniform(size=(4, 8, 3)), depth)

    def test_lift_then_measure_norm_equals_depth(self, rng):
        h, w = 16, 32
        depth = rng.uniform(0.5, 50, (h, w))
        pc = lift_panorama(rng.uniform(size=(h, w, 3)), depth)
        expected = depth[pc.source_pixels[:, 1], pc.source_pixels[:, 0]]
        rel = np.abs(np.linalg.norm(pc.positions, axis=1) - expected) / expected
        assert rel.max() < 1e-6

    def test_colors_and_layer_provenance(self, rng):
        rgb = rng.uniform(size=(4, 8, 3))
        pc = lift_panorama(rgb, np.ones((4, 8)), layer_id=3)
        assert set(pc.layer_ids) == {3}
        np.testing.assert_array_equal(
            pc.colors, rgb[pc.source_pixels[:, 1], pc.source_pixels[:, 0]]
        )


class TestOutlierRemoval:
    def test_defaults_documented(self):
        assert DEFAULT_BETA1 == 0.0001
        assert DEFAULT_BETA2 == 4

    def test_isolated_point_removed(self, rng):
        dense = rng.normal(0, 1e-5, (10, 3))
        isolated = np.array([[1.0, 0.0, 0.0]])
        pc = PointCloud(
            np.concatenate([dense, isolated]),
            np.zeros((11, 3)),
            np.zeros(11, np.int32),
            np.zeros((11, 2), np.int32),
        )
        out = remove_stretched_outliers(pc, beta1=1e-3, beta2=4, radius=0.01)
        assert len(out) == 10
        assert np.linalg.norm(out.positions, axis=1).max() < 0.1

    def test_all_coincident_retained(self):
        pos = np.zeros((6, 3)) + 1.0
        pc = PointCloud(pos, np.zeros((6, 3)), np.zeros(6, np.int32), np.zeros((6, 2), np.int32))
        out = remove_stretched_outliers(pc, beta1=DEFAULT_BETA1, beta2=DEFAULT_BETA2, radius=0.5)
        assert len(out) == 6

    def test_empty_input_empty_output(self):
        out = remove_stretched_outliers(PointCloud.empty(), 0.1, 4, 0.1)
        assert len(out) == 0

    def test_survivor_attributes_bit_exact(self, rng):
        pc = _random_cloud(rng, 200, spread=1.0, layers=3)
        out = remove_stretched_outliers(pc, beta1=0.5, beta2=2, radius=0.3)
        # match survivors back to source rows
        idx = brute_force_outlier_filter(pc, 0.5, 2, 0.3)
        np.testing.assert_array_equal(out.positions, pc.positions[idx])
        np.testing.assert_array_equal(out.colors, pc.colors[idx])
        np.testing.assert_array_equal(out.layer_ids, pc.layer_ids[idx])

    def test_matches_bruteforce_many_clouds(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 400))
            pc = _random_cloud(rng, n, spread=float(rng.uniform(0.5, 3.0)))
            beta1 = float(rng.uniform(0.05, 1.5))
            beta2 = int(rng.integers(0, 6))
            radius = float(rng.uniform(0.1, 1.0))
            out = remove_stretched_outliers(pc, beta1, beta2, radius)
            idx = brute_force_outlier_filter(pc, beta1, beta2, radius)
            np.testing.assert_array_equal(out.positions, pc.positions[idx])

    def test_parameter_validation(self, rng):
        pc = _random_cloud(rng, 5)
        with pytest.raises(ValueError):
            remove_stretched_outliers(pc, beta1=0.0)
        with pytest.raises(ValueError):
            remove_stretched_outliers(pc, beta1=0.1, beta2=-1)
        with pytest.raises(ValueError):
            remove_stretched_outliers(pc, beta1=0.1, beta2=1, radius=0.0)


class TestGridHash:
    def test_zero_maps_to_zero(self):
        assert grid_hash(np.zeros(3)).tolist() == [0, 0, 0]

    def test_e_minus_one_boundary(self):
        c = np.e - 1.0
        assert grid_hash(np.array([c, 0.0, 0.0]))[0] == 10

    def test_signed_extension(self):
        c = np.e - 1.0
        assert grid_hash(np.array([-c, 0.0, 0.0]))[0] == -10

    def test_unsigned_mode_rejects_negative(self):
        params = GridHashParams(signed=False)
        with pytest.raises(ValueError):
            grid_hash(np.array([-1.0, 0.0, 0.0]), params)
        assert grid_hash(np.array([np.e - 1, 0.0, 0.0]), params)[0] == 10

    def test_monotone_per_component(self, rng):
        c = np.sort(rng.uniform(0, 100, 500))
        idx = grid_hash(c)
        assert np.all(np.diff(idx) >= 0)

    def test_odd_symmetry(self, rng):
        c = rng.uniform(-50, 50, 300)
        np.testing.assert_array_equal(grid_hash(c), -grid_hash(-c))

    def test_beta3_validation(self):
        with pytest.raises(ValueError):
            GridHashParams(beta3=0.0)


class TestDownsample:
    def test_under_cap_identity(self, rng):
        pc = _random_cloud(rng, 100)
        out = downsample(pc, 200, seed=1)
        assert out is pc

    def test_exact_cap(self, rng):
        pc = _random_cloud(rng, 400, layers=3)
        out = downsample(pc, 200, seed=1)
        assert len(out) == 200

    def test_default_cap_value(self):
        assert DEFAULT_N_MAX == 2_000_000

    def test_layer_proportions_within_one(self, rng):
        counts = {0: 600, 1: 300, 2: 100}
        pos, layers = [], []
        for lab, c in counts.items():
            pos.append(rng.uniform(-1, 1, (c, 3)))
            layers.append(np.full(c, lab, np.int32))
        pc = PointCloud(
            np.concatenate(pos),
            np.zeros((1000, 3)),
            np.concatenate(layers),
            np.zeros((1000, 2), np.int32),
        )
        out = downsample(pc, 500, seed=7)
        assert len(out) == 500
        for lab, c in counts.items():
            expected = 500 * c / 1000
            got = int((out.layer_ids == lab).sum())
            assert abs(got - expected) <= 1

    def test_deterministic_and_subset(self, rng):
        pc = _random_cloud(rng, 500, layers=2)
        a = downsample(pc, 123, seed=9)
        b = downsample(pc, 123, seed=9)
        np.testing.assert_array_equal(a.positions, b.positions)
        # subset: every output row appears in the input
        rows = {tuple(r) for r in pc.positions}
        assert all(tuple(r) in rows for r in a.positions)


class TestPly:
    def test_round_trip(self, tmp_path, rng):
        pc = _random_cloud(rng, 50, layers=4)
        path = tmp_path / "cloud.ply"
        save_ply(pc, path)
        back = load_ply(path)
        assert len(back) == 50
        np.testing.assert_allclose(back.positions, pc.positions, atol=1e-5)
        np.testing.assert_allclose(back.colors, pc.colors, atol=0.5 / 255 + 1e-9)
        np.testing.assert_array_equal(back.layer_ids, pc.layer_ids)

    def test_rejects_non_ply(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"not a ply")
        with pytest.raises(ValueError):
            load_ply(path)

    def test_header_format(self, tmp_path, rng):
        pc = _random_cloud(rng, 3)
        path = tmp_path / "cloud.ply"
        save_ply(pc, path)
        head = path.read_bytes().split(b"end_header")[0]
        assert b"binary_little_endian" in head
        assert b"property int layer_id" in head
