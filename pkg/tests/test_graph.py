import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from motionavg.errors import CoincidentCenters, DegenerateConfiguration, DuplicateEdge, NodeSetMismatch, UnknownNodeRef
from motionavg.graph import (
    AbsolutePoseSet,
    CameraNode,
    CameraPose,
    DetectionBox,
    Gauge,
    RelativePoseEdge,
    ViewGraph,
    connected_components,
    gauge_align_rotations,
    relative_from_absolute,
    reverse_relative,
    similarity_align_translations,
    umeyama,
)
from motionavg.so3 import geodesic_angle, random_rotation, rot_about_axis

from .conftest import graph_from_poses, random_poses, rot_z
from .test_so3 import haar_batch, small_perturbations


def poses(rotations, centers):
    return {i: CameraPose.from_matrix(R, c) for i, (R, c) in enumerate(zip(rotations, centers))}


class TestTypes:
    def test_camera_node_validation(self):
        with pytest.raises(ValueError):
            CameraNode(0, focal=0.0)
        with pytest.raises(ValueError):
            CameraNode(0, width=0)

    def test_edge_rejects_self_loop(self):
        with pytest.raises(ValueError):
            RelativePoseEdge.from_matrix(1, 1, np.eye(3), [1, 0, 0])

    def test_edge_normalizes_direction(self):
        e = RelativePoseEdge.from_matrix(0, 1, np.eye(3), [0, 3, 4])
        assert np.allclose(e.t, [0, 0.6, 0.8])

    def test_graph_invariants(self):
        nodes = (CameraNode(0), CameraNode(1), CameraNode(2))
        e01 = RelativePoseEdge.from_matrix(0, 1, np.eye(3), [1, 0, 0])
        with pytest.raises(UnknownNodeRef):
            ViewGraph(nodes, (RelativePoseEdge.from_matrix(0, 5, np.eye(3), [1, 0, 0]),))
        with pytest.raises(DuplicateEdge):
            ViewGraph(nodes, (e01, RelativePoseEdge.from_matrix(1, 0, np.eye(3), [1, 0, 0])))
        with pytest.raises(ValueError):
            ViewGraph((CameraNode(0), CameraNode(0)), ())
        g = ViewGraph(nodes, (e01,))
        assert g.connectivity == pytest.approx(1 / 3)

    def test_box_outside_image_only_warns(self):
        nodes = (CameraNode(0), CameraNode(1))
        box = DetectionBox(600.0, 10.0, 100.0, 20.0)
        e = RelativePoseEdge.from_matrix(0, 1, np.eye(3), [1, 0, 0], ((box, box),))
        with pytest.warns(UserWarning):
            ViewGraph(nodes, (e,))

    def test_partial_ground_truth_rejected(self):
        nodes = (CameraNode(0), CameraNode(1))
        with pytest.raises(ValueError):
            ViewGraph(nodes, (), {0: CameraPose.from_matrix(np.eye(3), [0, 0, 0])})

    def test_anchored_gauge_requires_identity(self):
        with pytest.raises(ValueError):
            AbsolutePoseSet({0: rot_z(10)}, gauge=Gauge.ANCHORED, anchor=0)
        AbsolutePoseSet({0: np.eye(3)}, gauge=Gauge.ANCHORED, anchor=0)


class TestRelativeFromAbsolute:
    def test_identity_example(self):
        R, t = relative_from_absolute(poses([np.eye(3)] * 2, [[0, 0, 0], [1, 0, 0]]), 0, 1)
        assert np.allclose(R, np.eye(3)) and np.allclose(t, [1, 0, 0])

    def test_rotated_camera_example(self):
        # camera 0 is world-to-camera Rot(z, 90°), so the world x axis reads as +y in camera 0
        R, t = relative_from_absolute(poses([rot_z(90), np.eye(3)], [[0, 0, 0], [1, 0, 0]]), 0, 1)
        assert np.allclose(R, rot_z(90), atol=1e-15)
        assert np.allclose(t, [0, 1, 0], atol=1e-15)

    def test_coincident(self):
        with pytest.raises(CoincidentCenters):
            relative_from_absolute(poses([np.eye(3)] * 2, [[1, 1, 1], [1, 1, 1]]), 0, 1)

    def test_recompose(self, rng):
        for _ in range(50):
            Rs, cs = random_poses(2, rng)
            gt = poses(Rs, cs)
            _, t = relative_from_absolute(gt, 0, 1)
            base = (cs[1] - cs[0]) / np.linalg.norm(cs[1] - cs[0])
            assert np.allclose(Rs[0].T @ t, base, atol=1e-12)

    def test_reverse_edge_matches_swapped_pair(self, rng):
        for _ in range(20):
            gt = poses(*random_poses(2, rng))
            R_ji, t_ji = reverse_relative(*relative_from_absolute(gt, 0, 1))
            R2, t2 = relative_from_absolute(gt, 1, 0)
            assert np.allclose(R_ji, R2, atol=1e-12) and np.allclose(t_ji, t2, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_three_cycle_is_identity(self, seed):
        gt = poses(*random_poses(3, np.random.default_rng(seed)))
        loop = relative_from_absolute(gt, 0, 1)[0] @ relative_from_absolute(gt, 1, 2)[0] \
            @ relative_from_absolute(gt, 2, 0)[0]
        assert geodesic_angle(loop, np.eye(3)) < 1e-12

    def test_directions_are_gauge_invariant(self, rng):
        Rs, cs = random_poses(3, rng)
        S = random_rotation(rng)
        a = relative_from_absolute(poses(Rs, cs), 0, 2)
        b = relative_from_absolute(poses([R @ S for R in Rs], [S.T @ c for c in cs]), 0, 2)
        assert np.allclose(a[0], b[0], atol=1e-12) and np.allclose(a[1], b[1], atol=1e-12)


class TestComponents:
    def test_cycle(self, rng):
        g = graph_from_poses(*random_poses(8, rng), [(i, (i + 1) % 8) for i in range(8)])
        assert connected_components(g) == [set(range(8))]

    def test_no_edges(self):
        g = ViewGraph(tuple(CameraNode(i) for i in range(8)), ())
        assert connected_components(g) == [{i} for i in range(8)]

    @given(st.integers(0, 2**32 - 1), st.integers(0, 28))
    def test_partition(self, seed, m):
        rng = np.random.default_rng(seed)
        pairs = list(itertools.combinations(range(8), 2))
        chosen = [pairs[k] for k in rng.choice(28, size=m, replace=False)]
        g = graph_from_poses(*random_poses(8, rng), chosen)
        comps = connected_components(g)
        assert sorted(x for c in comps for x in c) == list(range(8))
        assert [min(c) for c in comps] == sorted(min(c) for c in comps)
        for e in g.edges:
            assert any(e.i in c and e.j in c for c in comps)


class TestRotationAlignment:
    def test_already_aligned(self, rng):
        Rs, cs = random_poses(5, rng)
        out = gauge_align_rotations(AbsolutePoseSet(dict(enumerate(Rs))), poses(Rs, cs))
        assert all(np.allclose(out.rotations[i], Rs[i], atol=1e-12) for i in range(5))
        assert out.gauge == Gauge.ALIGNED

    def test_pure_gauge_removed(self, rng):
        Rs, cs = random_poses(6, rng)
        Q = random_rotation(rng)
        out = gauge_align_rotations(AbsolutePoseSet({i: R @ Q for i, R in enumerate(Rs)}), poses(Rs, cs))
        assert all(np.allclose(out.rotations[i], Rs[i], atol=1e-10) for i in range(6))

    def test_node_mismatch(self, rng):
        Rs, cs = random_poses(3, rng)
        with pytest.raises(NodeSetMismatch):
            gauge_align_rotations(AbsolutePoseSet({0: Rs[0]}), poses(Rs, cs))

    def test_relatives_unchanged(self, rng):
        Rs, cs = random_poses(6, rng)
        pred = {i: random_rotation(rng) for i in range(6)}
        out = gauge_align_rotations(AbsolutePoseSet(pred), poses(Rs, cs))
        for i, j in itertools.combinations(range(6), 2):
            assert geodesic_angle(pred[i] @ pred[j].T, out.rotations[i] @ out.rotations[j].T) < 1e-12

    def test_noisy_against_sampling_oracle(self):
        rng = np.random.default_rng(3)
        Rs, cs = random_poses(8, rng)
        Q = random_rotation(rng)
        pred = {i: R @ rot_about_axis(_unit(rng.normal(size=3)), math.radians(5)) @ Q for i, R in enumerate(Rs)}
        out = gauge_align_rotations(AbsolutePoseSet(pred), poses(Rs, cs))
        gt = np.array(Rs)
        P = np.array([pred[i] for i in range(8)])
        ours = sum(np.linalg.norm(out.rotations[i] - Rs[i]) ** 2 for i in range(8))
        S = np.concatenate([haar_batch(rng, 50_000), Q.T @ small_perturbations(rng, 50_000, 0.1)])
        sampled = np.sum((np.einsum("nij,sjk->snik", P, S) - gt[None]) ** 2, axis=(1, 2, 3))
        assert ours <= sampled.min() + 1e-12
        mean_after = np.mean([geodesic_angle(out.rotations[i], Rs[i]) for i in range(8)])
        assert math.degrees(mean_after) < 10.0


def _unit(v):
    return v / np.linalg.norm(v)


class TestSimilarityAlignment:
    def test_identity(self, rng):
        Rs, cs = random_poses(5, rng)
        out = similarity_align_translations(AbsolutePoseSet(dict(enumerate(Rs)), dict(enumerate(cs))),
                                            poses(Rs, cs))
        assert all(np.allclose(out.centers[i], cs[i], atol=1e-12) for i in range(5))

    def test_exact_model_recovered(self, rng):
        Rs, cs = random_poses(6, rng)
        A, off = random_rotation(rng), rng.normal(size=3)
        pred = {i: 2.0 * A @ c + off for i, c in enumerate(cs)}
        s, R, o = umeyama(np.array([pred[i] for i in range(6)]), np.array(cs))
        assert s == pytest.approx(0.5, abs=1e-10)
        assert np.allclose(R, A.T, atol=1e-10)
        out = similarity_align_translations(AbsolutePoseSet(dict(enumerate(Rs)), pred), poses(Rs, cs))
        assert all(np.allclose(out.centers[i], cs[i], atol=1e-10) for i in range(6))

    def test_collinear_ground_truth(self):
        cs = [np.array([k, 0.0, 0.0]) for k in range(4)]
        Rs = [np.eye(3)] * 4
        with pytest.raises(DegenerateConfiguration):
            similarity_align_translations(AbsolutePoseSet(dict(enumerate(Rs)), dict(enumerate(cs))),
                                          poses(Rs, cs))

    def test_noisy_against_sampling_oracle(self):
        rng = np.random.default_rng(9)
        src = rng.normal(size=(8, 3))
        dst = 1.7 * src @ random_rotation(rng).T + rng.normal(size=3) + 0.1 * rng.normal(size=(8, 3))
        s, R, o = umeyama(src, dst)
        ours = np.sum((s * src @ R.T + o - dst) ** 2)
        n = 100_000
        Ss = np.concatenate([haar_batch(rng, n // 2), R @ small_perturbations(rng, n // 2, 0.05)])
        scales = np.concatenate([rng.uniform(0.1, 4.0, n // 2), s * np.exp(rng.normal(0, 0.05, n // 2))])
        offs = np.concatenate([rng.normal(0, 3, (n // 2, 3)), o + rng.normal(0, 0.05, (n // 2, 3))])
        moved = scales[:, None, None] * np.einsum("sij,nj->sni", Ss, src) + offs[:, None]
        sampled = np.sum((moved - dst[None]) ** 2, axis=(1, 2))
        assert ours <= sampled.min() + 1e-12
