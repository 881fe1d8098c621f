import numpy as np
import pytest
from numpy.testing import assert_allclose

from bevxform import (
    BevGrid,
    BevSpec,
    Box3D,
    DepthBins,
    EgoPose,
    Rig,
    Scene,
    TruePositiveErrors,
    nds,
    project_refs,
    oracle_dist_map,
    rasterize_gt_mask,
    render_depth,
    render_features,
    run_pipeline,
    warp_and_stack,
)
from bevxform.rigs import make_camera

BINS = DepthBins(d0=1.0, delta=0.5, count=118)


def forward_cam(z=1.5, fx=500.0):
    return make_camera("front", 0.0, (0.0, 0.0, z), fx=fx, width=704, height=256)


def empty_scene(rig, channels=4):
    return Scene(rig=rig, boxes=(), box_features=np.zeros((0, channels)))


class TestRaycast:
    def test_empty_scene_splits_sky_and_ground(self):
        cam = forward_cam()
        depth = render_depth(empty_scene(Rig(cameras=(cam,))), cam)
        assert depth.shape == (16, 44)
        # A level camera: upper pixel rows look above the horizon, lower rows
        # hit the ground plane at decreasing range.
        assert np.all(np.isinf(depth[:8]))
        assert np.all(np.isfinite(depth[8:]))
        mid = depth[8:, 22]
        assert np.all(np.diff(mid) < 0.0)

    def test_ground_depth_value(self):
        cam = forward_cam(z=1.5, fx=500.0)
        depth = render_depth(empty_scene(Rig(cameras=(cam,))), cam)
        # Feature row 8 samples image row v = 136; the ray drops 8 pixels per
        # 500 of forward travel, so it meets the ground at 1.5 * 500 / 8.
        assert_allclose(depth[8, 22], 1.5 * 500.0 / 8.0, rtol=1e-12)

    def test_front_face_depth_is_exact(self):
        cam = forward_cam()
        box = Box3D(center=(10.0, 0.0, 1.5), size=(1.0, 2.0, 2.0), yaw=0.0)
        scene = Scene(rig=Rig(cameras=(cam,)), boxes=(box,), box_features=np.ones((1, 4)))
        depth = render_depth(scene, cam)
        # Rays are parameterized by camera-frame depth, so every cell seeing
        # the x = 9.5 face reads exactly 9.5.
        assert depth[7, 21] == 9.5
        assert depth[8, 22] == 9.5
        assert np.isinf(depth[0, 0])

    def test_nearest_box_wins(self):
        cam = forward_cam()
        near = Box3D(center=(10.0, 0.0, 1.5), size=(1.0, 2.0, 2.0), yaw=0.0)
        far = Box3D(center=(20.0, 0.0, 1.5), size=(1.0, 4.0, 2.0), yaw=0.0)
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        scene = Scene(rig=Rig(cameras=(cam,)), boxes=(near, far), box_features=feats)
        depth = render_depth(scene, cam)
        fmap = render_features(scene, cam)
        assert depth[8, 22] == 9.5
        assert_allclose(fmap[8, 22], [1.0, 0.0])

    def test_rotated_box_front_face(self):
        # Heading flipped by pi keeps the same axis-aligned footprint.
        cam = forward_cam()
        box = Box3D(center=(10.0, 0.0, 1.5), size=(1.0, 2.0, 2.0), yaw=np.pi)
        scene = Scene(rig=Rig(cameras=(cam,)), boxes=(box,), box_features=np.ones((1, 1)))
        depth = render_depth(scene, cam)
        assert_allclose(depth[8, 22], 9.5, rtol=1e-12)

    def test_feature_map_zero_off_object(self):
        cam = forward_cam()
        box = Box3D(center=(10.0, 0.0, 1.5), size=(1.0, 2.0, 2.0), yaw=0.0)
        scene = Scene(
            rig=Rig(cameras=(cam,)), boxes=(box,), box_features=np.array([[3.0, 4.0]])
        )
        fmap = render_features(scene, cam)
        assert_allclose(fmap[8, 22], [3.0, 4.0])
        assert np.all(fmap[0, 0] == 0.0)  # sky
        assert np.all(fmap[15, 0] == 0.0)  # ground far to the side


class TestSceneOracleClosure:
    def test_surface_ref_scores_one_displaced_scores_zero(self):
        # Box front face at x = 12, a depth bin center.  With sigma 0 the
        # rendered distribution is one-hot there, so a reference point on the
        # face scores exactly 1 and one displaced by several bins scores 0.
        cam = forward_cam(z=1.0)
        box = Box3D(center=(14.0, 0.0, 1.0), size=(4.0, 2.0, 2.0), yaw=0.0)
        scene = Scene(
            rig=Rig(cameras=(cam,)),
            boxes=(box,),
            box_features=np.ones((1, 2)),
            depth_sigma=0.0,
        )
        dmap = oracle_dist_map(render_depth(scene, cam), BINS, sigma=scene.depth_sigma)
        hits = project_refs(
            np.array([[12.0, 0.0, 1.0], [14.0, 0.0, 1.0]]), scene.rig, [dmap]
        )
        assert [h.hit.valid for h in hits] == [True, True]
        assert hits[0].consistency == 1.0
        assert hits[1].consistency == 0.0


class TestSceneConstruction:
    def test_random_scene_is_seed_deterministic(self):
        rig = Rig(cameras=(forward_cam(),))
        a = Scene.random(rig, seed=11, n_boxes=3, channels=5)
        b = Scene.random(rig, seed=11, n_boxes=3, channels=5)
        assert np.array_equal(a.box_features, b.box_features)
        for ba, bb in zip(a.boxes, b.boxes):
            assert np.array_equal(ba.center, bb.center)
            assert np.array_equal(ba.size, bb.size)
            assert ba.yaw == bb.yaw

    def test_different_seeds_differ(self):
        rig = Rig(cameras=(forward_cam(),))
        a = Scene.random(rig, seed=1)
        b = Scene.random(rig, seed=2)
        assert not np.array_equal(a.box_features, b.box_features)

    def test_feature_row_count_checked(self):
        rig = Rig(cameras=(forward_cam(),))
        box = Box3D(center=(10.0, 0.0, 1.0), size=(2.0, 2.0, 2.0), yaw=0.0)
        with pytest.raises(ValueError, match="box_features"):
            Scene(rig=rig, boxes=(box,), box_features=np.ones((2, 4)))

    def test_negative_sigma_rejected(self):
        rig = Rig(cameras=(forward_cam(),))
        with pytest.raises(ValueError, match="depth_sigma"):
            Scene(rig=rig, boxes=(), box_features=np.zeros((0, 2)), depth_sigma=-1.0)


class TestRunPipeline:
    SPEC = BevSpec.square(51.2, 64, channels=4)

    def test_no_boxes_no_queries_refined_equals_forward(self):
        scene = empty_scene(Rig(cameras=(forward_cam(),)))
        result = run_pipeline(scene, self.SPEC)
        assert result.queries == []
        assert np.array_equal(result.refined.features, result.bev.features)
        assert np.array_equal(result.refined.occupied, result.bev.occupied)
        assert result.sparsity.occupied_cells > 0  # ground rays still splat

    def test_refinement_touches_only_foreground_cells(self):
        rig = Rig(cameras=(forward_cam(),))
        scene = Scene.random(rig, seed=3, n_boxes=2, channels=4)
        result = run_pipeline(scene, self.SPEC)
        gt = rasterize_gt_mask(list(scene.boxes), self.SPEC) > 0.5
        changed = np.any(result.refined.features != result.bev.features, axis=2)
        assert not np.any(changed & ~gt)

    def test_refined_occupancy_is_superset(self):
        rig = Rig(cameras=(forward_cam(),))
        scene = Scene.random(rig, seed=4, n_boxes=3, channels=4)
        result = run_pipeline(scene, self.SPEC)
        assert not np.any(result.bev.occupied & ~result.refined.occupied)

    def test_repeat_runs_bit_identical(self):
        rig = Rig(cameras=(forward_cam(),))
        scene = Scene.random(rig, seed=5, n_boxes=2, channels=4)
        a = run_pipeline(scene, self.SPEC)
        b = run_pipeline(scene, self.SPEC)
        assert np.array_equal(a.bev.features, b.bev.features)
        assert np.array_equal(a.refined.features, b.refined.features)
        assert np.array_equal(a.mask.probabilities, b.mask.probabilities)
        assert len(a.queries) == len(b.queries)

    def test_channel_mismatch_rejected(self):
        scene = empty_scene(Rig(cameras=(forward_cam(),)), channels=3)
        with pytest.raises(ValueError, match="channels"):
            run_pipeline(scene, self.SPEC)


class TestWarpAndStack:
    def make_grid(self, rng, size=8, channels=2, extent=4.0):
        spec = BevSpec.square(extent, size, channels=channels)
        grid = BevGrid.zeros(spec)
        grid.features[:] = rng.uniform(1.0, 2.0, grid.features.shape)
        grid.occupied[:] = True
        return grid

    def test_identity_poses_preserve_previous(self):
        rng = np.random.default_rng(0)
        prev = self.make_grid(rng)
        cur = self.make_grid(rng)
        pose = EgoPose.planar(0.0, 0.0, 0.0)
        out = warp_and_stack(prev, cur, pose, pose)
        assert out.spec.channels == 4
        assert_allclose(out.features[:, :, :2], prev.features, atol=1e-12)
        assert np.array_equal(out.features[:, :, 2:], cur.features)

    def test_one_cell_forward_motion_shifts_columns(self):
        rng = np.random.default_rng(1)
        prev = self.make_grid(rng)
        cur = self.make_grid(rng)
        cell = prev.spec.cell_w
        out = warp_and_stack(prev, cur, EgoPose.planar(0.0, 0.0, 0.0), EgoPose.planar(cell, 0.0, 0.0))
        assert_allclose(out.features[:, :-1, :2], prev.features[:, 1:], atol=1e-12)
        assert_allclose(out.features[:, -1, :2], 0.0, atol=1e-12)

    def test_quarter_turn_permutes_cells(self):
        rng = np.random.default_rng(2)
        prev = self.make_grid(rng, size=6)
        cur = self.make_grid(rng, size=6)
        out = warp_and_stack(
            prev, cur, EgoPose.planar(0.0, 0.0, 0.0), EgoPose.planar(0.0, 0.0, np.pi / 2.0)
        )
        n = 6
        for r in range(n):
            for c in range(n):
                assert_allclose(
                    out.features[r, c, :2], prev.features[c, n - 1 - r], atol=1e-10
                )

    def test_motion_beyond_extent_blanks_previous(self):
        rng = np.random.default_rng(3)
        prev = self.make_grid(rng)
        cur = self.make_grid(rng)
        out = warp_and_stack(
            prev, cur, EgoPose.planar(0.0, 0.0, 0.0), EgoPose.planar(100.0, 0.0, 0.0)
        )
        assert np.all(out.features[:, :, :2] == 0.0)
        assert np.array_equal(out.occupied, cur.occupied)

    def test_spec_mismatch_rejected(self):
        rng = np.random.default_rng(4)
        prev = self.make_grid(rng, size=8)
        cur = self.make_grid(rng, size=6)
        with pytest.raises(ValueError, match="spec|Spec"):
            warp_and_stack(prev, cur, EgoPose.planar(0, 0, 0), EgoPose.planar(0, 0, 0))


class TestEgoPose:
    def test_planar_yaw_round_trip(self):
        assert_allclose(EgoPose.planar(1.0, 2.0, 0.7).yaw, 0.7, atol=1e-12)

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError, match="orthonormal"):
            EgoPose(rotation=np.eye(3) * 2.0, translation=np.zeros(3))


class TestCompositeScore:
    def test_perfect_score(self):
        assert nds(1.0, TruePositiveErrors(0, 0, 0, 0, 0)) == 1.0

    def test_errors_clamp_at_one(self):
        errs = TruePositiveErrors(1.0, 2.0, 5.0, 1.5, 1.0)
        assert_allclose(nds(0.6, errs), 0.3, atol=1e-12)

    def test_monotone_in_each_error(self):
        base = dict(translation=0.3, scale=0.3, orientation=0.3, velocity=0.3, attribute=0.3)
        ref = nds(0.5, TruePositiveErrors(**base))
        for name in base:
            worse = dict(base)
            worse[name] = 0.6
            assert nds(0.5, TruePositiveErrors(**worse)) < ref

    def test_map_range_validated(self):
        with pytest.raises(ValueError, match="mean_ap"):
            nds(1.2, TruePositiveErrors(0, 0, 0, 0, 0))

    def test_negative_error_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            TruePositiveErrors(-0.1, 0, 0, 0, 0)
