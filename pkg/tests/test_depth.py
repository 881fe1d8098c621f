import numpy as np
import pytest
from numpy.testing import assert_allclose

from bevxform import (
    DepthBins,
    DepthDistMap,
    consistency,
    consistency_on_map,
    oracle_dist_map,
    oracle_distribution,
    sample_distribution,
    two_hot,
)

BINS = DepthBins(d0=1.0, delta=0.5, count=118)
SMALL = DepthBins(d0=1.0, delta=0.5, count=4)


def random_dist(rng, count):
    w = rng.uniform(0.0, 1.0, count)
    return w / w.sum()


class TestTwoHot:
    def test_midpoint_splits_evenly(self):
        w = two_hot(1.25, BINS)
        assert w[0] == 0.5 and w[1] == 0.5
        assert w[2:].sum() == 0.0

    def test_bin_center_is_one_hot(self):
        for k in (0, 3, 117):
            w = two_hot(1.0 + 0.5 * k, BINS)
            assert w[k] == 1.0
            assert w.sum() == 1.0

    def test_below_range_is_all_zero(self):
        w = two_hot(0.2, BINS)
        assert np.all(w == 0.0)
        assert not BINS.in_range(0.2)

    def test_above_range_is_all_zero(self):
        top = BINS.max_depth
        assert two_hot(top + 1e-9, BINS).sum() == 0.0
        assert two_hot(top, BINS)[-1] == 1.0

    def test_weights_interpolate_linearly(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            d = rng.uniform(BINS.d0, BINS.max_depth)
            w = two_hot(d, BINS)
            assert_allclose(w.sum(), 1.0, atol=1e-12)
            assert_allclose(w @ BINS.centers(), d, rtol=1e-12)


class TestConsistency:
    def test_hand_evaluated_example(self):
        dist = np.array([0.1, 0.7, 0.2, 0.0])
        assert abs(consistency(dist, 1.25, SMALL) - 0.4) <= 1e-12

    def test_uniform_dist_gives_inverse_count(self):
        uniform = np.full(118, 1.0 / 118)
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = rng.uniform(BINS.d0, BINS.max_depth)
            assert_allclose(consistency(uniform, d, BINS), 1.0 / 118, rtol=1e-12)

    def test_bin_center_reads_single_weight(self):
        rng = np.random.default_rng(3)
        dist = random_dist(rng, 118)
        for k in (0, 17, 117):
            assert_allclose(consistency(dist, 1.0 + 0.5 * k, BINS), dist[k], rtol=1e-12)

    def test_out_of_range_scores_zero(self):
        rng = np.random.default_rng(4)
        dist = random_dist(rng, 118)
        assert consistency(dist, 0.5, BINS) == 0.0
        assert consistency(dist, 1000.0, BINS) == 0.0

    def test_bounded_by_max_weight(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            dist = random_dist(rng, 118)
            d = rng.uniform(0.0, BINS.max_depth + 5.0)
            assert consistency(dist, d, BINS) <= dist.max() + 1e-12

    def test_continuous_at_bin_boundaries(self):
        rng = np.random.default_rng(6)
        dist = random_dist(rng, 118)
        for k in (1, 50, 116):
            d = 1.0 + 0.5 * k
            left = consistency(dist, d - 1e-9, BINS)
            right = consistency(dist, d + 1e-9, BINS)
            assert abs(left - dist[k]) < 1e-7
            assert abs(right - dist[k]) < 1e-7

    def test_rejects_invalid_distribution(self):
        with pytest.raises(ValueError, match="non-negative"):
            consistency(np.array([-0.1, 1.1, 0.0, 0.0]), 1.25, SMALL)
        with pytest.raises(ValueError, match="at most 1"):
            consistency(np.array([0.9, 0.9, 0.0, 0.0]), 1.25, SMALL)

    def test_accepts_partial_mass(self):
        # Blending an in-range cell with an out-of-range one sheds mass; the
        # score just scales down with it.
        dist = np.array([0.1, 0.2, 0.0, 0.0])
        assert consistency(dist, 1.5, SMALL) == 0.2


class TestSampleDistribution:
    def make_map(self, rng, h=4, w=6, count=5):
        grid = rng.uniform(0.0, 1.0, (h, w, count))
        grid /= grid.sum(axis=2, keepdims=True)
        return DepthDistMap(bins=DepthBins(1.0, 0.5, count), grid=grid)

    def test_cell_center_is_exact(self):
        rng = np.random.default_rng(7)
        m = self.make_map(rng)
        assert_allclose(sample_distribution(m, 2.5, 1.5), m.grid[1, 2], atol=1e-15)

    def test_midpoint_blends_one_hots(self):
        grid = np.zeros((1, 2, 4))
        grid[0, 0, 1] = 1.0
        grid[0, 1, 3] = 1.0
        m = DepthDistMap(bins=DepthBins(1.0, 0.5, 4), grid=grid)
        assert_allclose(sample_distribution(m, 1.0, 0.5), [0.0, 0.5, 0.0, 0.5])

    def test_constant_field_everywhere(self):
        grid = np.tile(np.array([0.25, 0.25, 0.5]), (3, 3, 1))
        m = DepthDistMap(bins=DepthBins(1.0, 0.5, 3), grid=grid)
        rng = np.random.default_rng(8)
        for _ in range(20):
            u, v = rng.uniform(-1.0, 4.0, 2)
            assert_allclose(sample_distribution(m, u, v), [0.25, 0.25, 0.5], atol=1e-15)

    def test_out_of_bounds_clamps_to_edge(self):
        rng = np.random.default_rng(9)
        m = self.make_map(rng)
        assert_allclose(sample_distribution(m, -3.0, -3.0), m.grid[0, 0], atol=1e-15)
        assert_allclose(sample_distribution(m, 99.0, 99.0), m.grid[-1, -1], atol=1e-15)

    def test_outputs_stay_normalized(self):
        rng = np.random.default_rng(10)
        m = self.make_map(rng, h=5, w=7, count=9)
        for _ in range(100):
            u, v = rng.uniform(-1.0, 8.0), rng.uniform(-1.0, 6.0)
            s = sample_distribution(m, u, v)
            assert np.all(s >= 0.0)
            assert_allclose(s.sum(), 1.0, atol=1e-6)


class TestConsistencyOnMap:
    def test_matches_scalar_composition(self):
        rng = np.random.default_rng(11)
        grid = rng.uniform(0.0, 1.0, (4, 6, 20))
        grid /= grid.sum(axis=2, keepdims=True)
        m = DepthDistMap(bins=DepthBins(1.0, 0.5, 20), grid=grid)
        us = rng.uniform(-1.0, 7.0, 300)
        vs = rng.uniform(-1.0, 5.0, 300)
        ds = rng.uniform(0.0, 12.0, 300)
        batch = consistency_on_map(m, us, vs, ds)
        for k in range(300):
            scalar = consistency(sample_distribution(m, us[k], vs[k]), ds[k], m.bins)
            assert_allclose(batch[k], scalar, atol=1e-14)


class TestOracleDistribution:
    def test_sigma_zero_is_two_hot(self):
        assert_allclose(oracle_distribution(1.25, BINS, sigma=0.0), two_hot(1.25, BINS))

    def test_large_sigma_approaches_uniform(self):
        span = BINS.max_depth - BINS.d0
        w = oracle_distribution(20.0, BINS, sigma=200.0 * span)
        assert w.max() - w.min() < 1e-3

    def test_sigma_delta_peaks_at_nearest_center(self):
        w = oracle_distribution(1.0 + 0.5 * 30, BINS, sigma=0.5)
        assert int(np.argmax(w)) == 30

    def test_infinite_depth_gives_zero_vector(self):
        assert oracle_distribution(np.inf, BINS, sigma=1.0).sum() == 0.0
        assert oracle_distribution(np.inf, BINS, sigma=0.0).sum() == 0.0

    def test_far_depth_does_not_underflow(self):
        # Shifted exponentials keep the nearest bin finite even at silly sigmas.
        w = oracle_distribution(1e5, BINS, sigma=0.1)
        assert_allclose(w.sum(), 1.0, rtol=1e-12)
        assert int(np.argmax(w)) == 117

    def test_rejects_negative_sigma(self):
        with pytest.raises(ValueError, match="sigma"):
            oracle_distribution(5.0, BINS, sigma=-1.0)


class TestOracleDistMap:
    def test_matches_per_cell_oracle(self):
        rng = np.random.default_rng(12)
        depth = rng.uniform(0.5, 70.0, (3, 5))
        depth[0, 0] = np.inf
        for sigma in (0.0, 1.5):
            m = oracle_dist_map(depth, SMALL, sigma=sigma)
            for j in range(3):
                for i in range(5):
                    assert_allclose(
                        m.grid[j, i], oracle_distribution(depth[j, i], SMALL, sigma=sigma),
                        atol=1e-12,
                    )
