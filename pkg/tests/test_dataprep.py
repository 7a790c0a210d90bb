import numpy as np
import pytest

from splatfeat import CameraView, ValidationError, make_scene
from splatfeat.dataprep import (ANCHOR_GROUPS, EASY_FRACTION, GROUP_SIZE,
                                INPUT_COUNTS, IOU_THRESHOLD, build_graph,
                                frustum_iou, partition_targets,
                                pose_distance, pose_embedding_hook,
                                prep_view_groups, sample_anchors,
                                select_inputs, voxel_prune)

from reference import random_scene


def cam(center, yaw=0.0, cid="c", size=32, focal=30.0):
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.array([[c, 0, -s], [0, 1, 0], [s, 0, c]])
    t = -R @ np.asarray(center, dtype=np.float64)
    w2c = np.eye(4)
    w2c[:3, :3] = R
    w2c[:3, 3] = t
    return CameraView(cid, focal, focal, size / 2, size / 2, size, size, w2c)


def line_cameras(count, spacing=1.0):
    return [cam([i * spacing, 0, 0], cid=f"c{i}") for i in range(count)]


def random_cameras(rng, count, spread=3.0):
    out = []
    for i in range(count):
        center = rng.uniform(-spread, spread, 3)
        yaw = rng.uniform(0, 2 * np.pi)
        out.append(cam(center, yaw, cid=f"c{i}"))
    return out


class TestPoseDistance:
    def test_identity(self):
        a = cam([0, 0, 0])
        assert pose_distance(a, a) == 0.0

    def test_pure_translation(self):
        a, b = cam([0, 0, 0]), cam([1, 0, 0])
        assert pose_distance(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_pure_180_rotation(self):
        a = cam([0, 0, 0], yaw=0.0)
        b = cam([0, 0, 0], yaw=np.pi)
        assert pose_distance(a, b) == pytest.approx(np.sqrt(8.0 / 3.0), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        views = random_cameras(rng, 6)
        for i in range(6):
            for j in range(6):
                assert pose_distance(views[i], views[j]) == pytest.approx(
                    pose_distance(views[j], views[i]), abs=1e-12)


class TestBuildGraph:
    def test_line_neighbors(self):
        views = line_cameras(6)
        g = build_graph(views, n_neighbors=2)
        assert g.degrees.min() >= 2
        # Unit spacing: each interior node connects to both unit-distance
        # neighbors; threshold sits just above distance 2.
        assert g.delta == pytest.approx(2.0, rel=1e-12)

    def test_complete_graph(self):
        views = line_cameras(5)
        g = build_graph(views, n_neighbors=4)
        assert (g.degrees == 4).all()

    def test_duplicate_pose_zero_edge(self):
        views = [cam([0, 0, 0]), cam([0, 0, 0]), cam([5, 0, 0])]
        g = build_graph(views, 1)
        assert g.adjacency[0, 1] and g.adjacency[1, 0]
        assert g.distances[0, 1] == 0.0

    def test_min_degree_randomized(self):
        rng = np.random.default_rng(1)
        for trial in range(5):
            views = random_cameras(rng, 12)
            ng = int(rng.integers(1, 6))
            g = build_graph(views, ng)
            assert g.degrees.min() >= ng

    def test_delta_minimality(self):
        rng = np.random.default_rng(2)
        views = random_cameras(rng, 10)
        g = build_graph(views, 3)
        smaller = np.nextafter(np.nextafter(g.delta, 0.0), 0.0)
        off = g.distances + np.diag(np.full(10, np.inf))
        degrees = (off < smaller).sum(axis=1)
        assert degrees.min() < 3

    def test_too_few_frames(self):
        with pytest.raises(ValidationError):
            build_graph(line_cameras(3), 3)


class TestSampleAnchors:
    def test_all_nodes(self):
        views = line_cameras(5)
        g = build_graph(views, 2)
        got = sample_anchors(g, 5, seed=0)
        assert sorted(got) == list(range(5))

    def test_deterministic(self):
        views = line_cameras(8)
        g = build_graph(views, 2)
        assert sample_anchors(g, 3, seed=7) == sample_anchors(g, 3, seed=7)

    def test_isolated_never_sampled(self):
        # Zero out one node's adjacency to simulate isolation.
        views = line_cameras(6)
        g = build_graph(views, 2)
        adj = g.adjacency.copy()
        adj[3, :] = False
        adj[:, 3] = False
        from splatfeat.dataprep import PoseGraph
        g2 = PoseGraph(g.distances, g.delta, adj)
        for seed in range(30):
            assert 3 not in sample_anchors(g2, 4, seed=seed)

    def test_uniform_when_degrees_equal(self):
        views = line_cameras(4)
        g = build_graph(views, 3)  # complete graph: all degrees equal
        counts = np.zeros(4)
        for seed in range(2000):
            counts[sample_anchors(g, 1, seed=seed)[0]] += 1
        # Chi-square against uniform with 3 dof; 3-sigma-ish bound ~ 16.
        expected = 2000 / 4
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 16.27


class TestSelectInputs:
    def test_all_frames(self):
        views = line_cameras(4)
        got = select_inputs(views, [0, 1, 2, 3], 4, seed=0)
        assert got == [0, 1, 2, 3]

    def test_two_separated_clusters(self):
        views = ([cam([0, 0, 0], cid="a0"), cam([0.1, 0, 0], cid="a1")]
                 + [cam([10, 0, 0], cid="b0"), cam([10.1, 0, 0], cid="b1")])
        got = select_inputs(views, [0, 1, 2, 3], 2, seed=1)
        assert len(got) == 2
        assert (got[0] in (0, 1)) and (got[1] in (2, 3))

    def test_single_input_is_central(self):
        views = line_cameras(5)
        got = select_inputs(views, [0, 1, 2, 3, 4], 1, seed=0)
        assert got == [2]

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        views = random_cameras(rng, 9)
        base = select_inputs(views, range(9), 3, seed=5)
        for _ in range(5):
            perm = list(rng.permutation(9))
            assert select_inputs(views, perm, 3, seed=5) == base

    def test_neighborhood_too_small(self):
        views = line_cameras(3)
        with pytest.raises(ValidationError):
            select_inputs(views, [0, 1], 3, seed=0)


class TestPartitionTargets:
    def test_constant_embedding_index_split(self):
        embed = lambda i: np.array([1.0, 0.0])
        easy, hard = partition_targets([5, 6, 7, 8, 9], [0], embed,
                                       easy_fraction=0.6)
        assert easy == [5, 6, 7]
        assert hard == [8, 9]

    def test_all_easy(self):
        embed = lambda i: np.array([1.0, 0.0])
        easy, hard = partition_targets([1, 2, 3], [0], embed, easy_fraction=1.0)
        assert easy == [1, 2, 3] and hard == []

    def test_known_ordering(self):
        # Embeddings on a circle: distance to ref 0 grows with index.
        def embed(i):
            a = 0.3 * i
            return np.array([np.cos(a), np.sin(a)])
        easy, hard = partition_targets([1, 2, 3, 4], [0], embed,
                                       easy_fraction=0.5)
        assert easy == [1, 2]
        assert hard == [3, 4]


class TestFrustumIou:
    def test_identical_views(self):
        v = cam([0, 0, 0])
        iou = frustum_iou(v, v, sample_count=100_000, seed=0)
        assert iou >= 0.99
        assert iou == pytest.approx(1.0, abs=0.01)

    def test_opposite_directions(self):
        a = cam([0, 0, 0], yaw=0.0)
        b = cam([0, 0, 0], yaw=np.pi)
        assert frustum_iou(a, b, sample_count=50_000, seed=0) == pytest.approx(
            0.0, abs=1e-6)

    def test_nested_depth_range_volume_ratio(self):
        # Same apex and FOV, one frustum over [n, f], other over [n, f/2]:
        # IoU = volume ratio (f/2 case fully inside).
        v = cam([0, 0, 0])
        near, far = 0.1, 8.0
        iou = frustum_iou_nested = None
        a = frustum_iou(v, v, depth_range=(near, far), sample_count=100_000, seed=3)
        # Nested case computed against a shallower clone of the same camera
        # is equivalent to intersecting depth ranges; compare volumes.
        vol = lambda n, f: f ** 3 - n ** 3
        expected = vol(near, far / 2) / vol(near, far)
        # Build by sampling: reuse the same view but restrict one range.
        from splatfeat.dataprep import _frustum_geometry, _in_frustum, _sample_frustum
        rng = np.random.default_rng(3)
        pts_big = _sample_frustum(v, near, far, 100_000, rng)
        frac = _in_frustum(pts_big, v, near, far / 2).mean()
        assert frac == pytest.approx(expected, abs=0.02)

    def test_symmetry_within_noise(self):
        a = cam([0, 0, 0], yaw=0.2)
        b = cam([0.5, 0, 0], yaw=-0.1)
        i_ab = frustum_iou(a, b, sample_count=100_000, seed=1)
        i_ba = frustum_iou(b, a, sample_count=100_000, seed=2)
        assert abs(i_ab - i_ba) <= 0.01

    def test_seeded_determinism(self):
        a = cam([0, 0, 0], yaw=0.2)
        b = cam([0.3, 0, 0])
        assert frustum_iou(a, b, seed=9) == frustum_iou(a, b, seed=9)

    def test_degenerate_range(self):
        v = cam([0, 0, 0])
        with pytest.raises(ValidationError):
            frustum_iou(v, v, depth_range=(2.0, 1.0))


class TestVoxelPrune:
    def test_no_pruning_when_fine(self):
        rng = np.random.default_rng(4)
        scene = random_scene(rng, 30)
        min_dist = np.inf
        p = scene.positions
        for i in range(30):
            d = np.linalg.norm(p - p[i], axis=1)
            d[i] = np.inf
            min_dist = min(min_dist, d.min())
        pruned, rate = voxel_prune(scene, voxel_size=min_dist / 4.0)
        assert rate == 0.0
        assert len(pruned) == 30

    def test_single_voxel(self):
        scene = make_scene(np.full((10, 3), 0.25),
                           opacities=np.linspace(0.1, 0.9, 10))
        pruned, rate = voxel_prune(scene, voxel_size=10.0)
        assert len(pruned) == 1
        assert pruned.opacities[0] == pytest.approx(0.9)
        assert rate == pytest.approx(0.9)

    def test_grid_matches_brute_force_binning(self):
        rng = np.random.default_rng(5)
        scene = random_scene(rng, 1000, feature_dim=4)
        voxel = 0.25  # unit-cube scene spans ~4 cells per axis
        pruned, rate = voxel_prune(scene, voxel)
        cells = set(map(tuple, np.floor(scene.positions / voxel).astype(int)))
        assert len(pruned) == len(cells)
        assert rate == pytest.approx(1.0 - len(cells) / 1000)
        assert pruned.features is not None
        assert pruned.features.shape == (len(cells), 4)

    def test_idempotent(self):
        rng = np.random.default_rng(6)
        scene = random_scene(rng, 200)
        once, _ = voxel_prune(scene, 0.2)
        twice, rate2 = voxel_prune(once, 0.2)
        assert rate2 == 0.0
        np.testing.assert_array_equal(once.positions, twice.positions)

    def test_keeps_original_order_and_ties(self):
        pos = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.9, 0.9, 0.9]])
        scene = make_scene(pos, opacities=[0.5, 0.5, 0.3])
        pruned, _ = voxel_prune(scene, 0.5)
        # Tie at opacity 0.5 keeps index 0; kept rows stay in original order.
        np.testing.assert_array_equal(pruned.positions,
                                      np.array([[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]]))


class TestPaperDefaults:
    def test_constants(self):
        assert GROUP_SIZE == 21
        assert ANCHOR_GROUPS == 3
        assert IOU_THRESHOLD == 0.4
        assert EASY_FRACTION == 0.6
        assert INPUT_COUNTS == (1, 3, 6, 9, 12)


class TestPrepViewGroups:
    def test_end_to_end_groups(self):
        rng = np.random.default_rng(7)
        # Ring of cameras looking inward: plenty of mutual overlap.
        views = []
        for i in range(30):
            a = 2 * np.pi * i / 30
            views.append(cam([3 * np.sin(a), 0, -3 * np.cos(a)], yaw=a,
                             cid=f"c{i}", focal=16.0))
        groups = prep_view_groups(views, input_count=3, anchor_count=2,
                                  group_size=12, iou_samples=4000, seed=3)
        assert len(groups) == 2
        for g in groups:
            members = set(g.input_views) | set(g.easy_targets) | set(g.hard_targets)
            assert len(g.input_views) == 3
            assert len(members) == (len(g.input_views) + len(g.easy_targets)
                                    + len(g.hard_targets))  # disjoint
            assert len(members) <= 12

    def test_deterministic(self):
        views = []
        for i in range(25):
            a = 2 * np.pi * i / 25
            views.append(cam([2 * np.sin(a), 0, -2 * np.cos(a)], yaw=a,
                             cid=f"c{i}", focal=16.0))
        g1 = prep_view_groups(views, 3, anchor_count=2, group_size=10,
                              iou_samples=2000, seed=11)
        g2 = prep_view_groups(views, 3, anchor_count=2, group_size=10,
                              iou_samples=2000, seed=11)
        assert g1 == g2


class TestLumaEmbedding:
    def test_unit_norm_and_discrimination(self):
        from splatfeat.dataprep import luma_embedding_hook
        rng = np.random.default_rng(0)
        images = [rng.uniform(size=(32, 32, 3)) for _ in range(3)]
        images.append(images[0].copy())
        hook = luma_embedding_hook(images)
        for i in range(4):
            assert np.linalg.norm(hook(i)) == pytest.approx(1.0, abs=1e-12)
        assert hook(0) @ hook(3) == pytest.approx(1.0, abs=1e-12)
        assert hook(0) @ hook(1) < 1.0 - 1e-6

    def test_grayscale_input(self):
        from splatfeat.dataprep import luma_embedding_hook
        hook = luma_embedding_hook([np.ones((16, 16))])
        assert hook(0).shape == (64,)
