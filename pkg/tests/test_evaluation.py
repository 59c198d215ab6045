import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from motionavg.errors import DegenerateConfiguration, EmptyDataset, LengthMismatch, NodeSetMismatch
from motionavg.evaluation import (
    CSV_HEADER,
    ROTATION_THRESHOLDS_DEG,
    TRANSLATION_THRESHOLDS_M,
    GraphResult,
    MetricsReport,
    evaluate_dataset,
    graph_rotation_error,
    graph_translation_error,
    histogram,
    summarize,
)
from motionavg.graph import AbsolutePoseSet, CameraPose
from motionavg.graph_io import parse_graphs, parse_poses
from motionavg.so3 import matrix_to_quat, random_rotation, rot_about_axis

from .conftest import graph_from_poses, random_poses

FIXTURES = Path(__file__).parent / "fixtures"
seeds = st.integers(0, 2**32 - 1)


def gt_of(rotations, centers):
    return {i: CameraPose.from_matrix(R, c) for i, (R, c) in enumerate(zip(rotations, centers))}


def dual_rotation_error(pred: dict, gt: dict) -> float:
    """Gauge fit by SVD of Σ pred_iᵀ gt_i, angles from quaternions."""
    M = sum(pred[i].T @ gt[i] for i in gt)
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    S = U @ D @ Vt
    angles = []
    for i in gt:
        w = abs(matrix_to_quat((pred[i] @ S).T @ gt[i]).w)
        angles.append(math.degrees(2 * math.acos(min(1.0, w))))
    return sum(angles) / len(angles)


def dual_translation_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """Umeyama fit written out directly."""
    mp, mg = pred.mean(axis=0), gt.mean(axis=0)
    P, G = pred - mp, gt - mg
    U, s, Vt = np.linalg.svd(G.T @ P / len(P))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    scale = np.trace(np.diag(s) @ D) / (np.sum(P * P) / len(P))
    moved = scale * P @ R.T + mg
    return float(np.mean(np.linalg.norm(moved - gt, axis=1)))


class TestGraphErrors:
    def test_pure_gauge_is_zero(self, rng):
        Rs, cs = random_poses(8, rng)
        Q = random_rotation(rng)
        pred = AbsolutePoseSet({i: R @ Q for i, R in enumerate(Rs)})
        assert graph_rotation_error(pred, gt_of(Rs, cs)) < 1e-8

    def test_half_nodes_ten_degrees(self, rng):
        Rs, cs = random_poses(8, rng)
        axis = np.array([0.0, 0.0, 1.0])
        turns = [10, -10, 10, -10, 0, 0, 0, 0]
        pred = AbsolutePoseSet({i: R @ rot_about_axis(axis, math.radians(d)) for i, (R, d) in enumerate(zip(Rs, turns))})
        # the ± pairs make Σ predᵀ gt symmetric positive definite, so the fitted gauge is I
        assert graph_rotation_error(pred, gt_of(Rs, cs)) == pytest.approx(5.0, abs=1e-9)

    @given(seeds)
    def test_rotation_matches_dual(self, seed):
        rng = np.random.default_rng(seed)
        Rs, cs = random_poses(6, rng)
        pred = {i: random_rotation(rng) for i in range(6)}
        ours = graph_rotation_error(AbsolutePoseSet(pred), gt_of(Rs, cs))
        assert ours == pytest.approx(dual_rotation_error(pred, dict(enumerate(Rs))), abs=1e-9)

    def test_similarity_is_zero(self, rng):
        Rs, cs = random_poses(6, rng)
        A = random_rotation(rng)
        pred = AbsolutePoseSet(dict(enumerate(Rs)), {i: 0.3 * A @ c + 5.0 for i, c in enumerate(cs)})
        assert graph_translation_error(pred, gt_of(Rs, cs)) < 1e-8

    def test_offset_without_alignment(self, rng):
        Rs, cs = random_poses(5, rng)
        shift = np.array([0.0, 0.1, 0.0])
        pred = AbsolutePoseSet(dict(enumerate(Rs)), {i: c + shift for i, c in enumerate(cs)})
        assert graph_translation_error(pred, gt_of(Rs, cs), align=False) == pytest.approx(0.1, abs=1e-12)
        assert graph_translation_error(pred, gt_of(Rs, cs)) < 1e-12

    @given(seeds)
    def test_translation_matches_dual(self, seed):
        rng = np.random.default_rng(seed)
        Rs, cs = random_poses(6, rng)
        pred = rng.normal(size=(6, 3))
        ours = graph_translation_error(AbsolutePoseSet(dict(enumerate(Rs)), dict(enumerate(pred))), gt_of(Rs, cs))
        assert ours == pytest.approx(dual_translation_error(pred, np.array(cs)), abs=1e-9)

    def test_collinear_gt(self):
        cs = [np.array([float(k), 0, 0]) for k in range(4)]
        Rs = [np.eye(3)] * 4
        pred = AbsolutePoseSet(dict(enumerate(Rs)), dict(enumerate(cs)))
        with pytest.raises(DegenerateConfiguration):
            graph_translation_error(pred, gt_of(Rs, cs))

    def test_node_mismatch(self, rng):
        Rs, cs = random_poses(3, rng)
        with pytest.raises(NodeSetMismatch):
            graph_rotation_error(AbsolutePoseSet({0: Rs[0], 1: Rs[1]}), gt_of(Rs, cs))

    @given(seeds)
    def test_gauge_and_similarity_invariance(self, seed):
        rng = np.random.default_rng(seed)
        Rs, cs = random_poses(6, rng)
        pred = AbsolutePoseSet({i: random_rotation(rng) for i in range(6)}, dict(enumerate(rng.normal(size=(6, 3)))))
        base_r = graph_rotation_error(pred, gt_of(Rs, cs))
        base_t = graph_translation_error(pred, gt_of(Rs, cs))
        Q = random_rotation(rng)
        assert graph_rotation_error(pred, gt_of([R @ Q for R in Rs], cs)) == pytest.approx(base_r, abs=1e-8)
        # a similarity of the GT scales the metric error by s
        s, A, off = 2.5, random_rotation(rng), rng.normal(size=3)
        moved = gt_of(Rs, [s * A @ c + off for c in cs])
        assert graph_translation_error(pred, moved) == pytest.approx(s * base_t, abs=1e-8)


class TestSummaries:
    def test_single_graph(self):
        s = summarize([4.0], ROTATION_THRESHOLDS_DEG)
        assert s.median == 4.0
        assert s.pct_under == {3.0: 0.0, 5.0: 100.0, 10.0: 100.0, 30.0: 100.0, 45.0: 100.0}

    def test_even_median(self):
        assert summarize([1, 2, 3, 4], ROTATION_THRESHOLDS_DEG).median == 2.5

    def test_threshold_is_strict(self):
        assert summarize([5.0], ROTATION_THRESHOLDS_DEG).pct_under[5.0] == 0.0

    @given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=50))
    def test_monotone_and_bounded(self, errors):
        s = summarize(errors, ROTATION_THRESHOLDS_DEG)
        pcts = [s.pct_under[t] for t in ROTATION_THRESHOLDS_DEG]
        assert all(0.0 <= p <= 100.0 for p in pcts)
        assert pcts == sorted(pcts)
        assert s.median >= 0.0

    @given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=50), st.randoms())
    def test_permutation_invariant(self, errors, rnd):
        shuffled = list(errors)
        rnd.shuffle(shuffled)
        assert summarize(errors, TRANSLATION_THRESHOLDS_M) == summarize(shuffled, TRANSLATION_THRESHOLDS_M)


class TestDataset:
    def test_frozen_fixture(self):
        graphs = parse_graphs((FIXTURES / "eval20.graphs").read_text())
        poses = parse_poses((FIXTURES / "eval20.poses").read_text())
        report = evaluate_dataset([g for _, g in graphs], [poses.get(name) for name, _ in graphs])
        assert report.n_evaluated == 18 and report.n_skipped == 2
        assert report.to_csv() == (FIXTURES / "eval20_report.csv").read_text()

    def test_fixture_is_permutation_invariant(self):
        graphs = parse_graphs((FIXTURES / "eval20.graphs").read_text())
        poses = parse_poses((FIXTURES / "eval20.poses").read_text())
        order = np.random.default_rng(1).permutation(len(graphs))
        shuffled = [graphs[k] for k in order]
        a = evaluate_dataset([g for _, g in graphs], [poses.get(n) for n, _ in graphs])
        b = evaluate_dataset([g for _, g in shuffled], [poses.get(n) for n, _ in shuffled])
        assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()

    def test_accounting(self, rng):
        good = graph_from_poses(*random_poses(4, rng), [(0, 1), (1, 2), (2, 3), (0, 3)])
        split = graph_from_poses(*random_poses(4, rng), [(0, 1), (2, 3)])
        exact = AbsolutePoseSet({i: good.ground_truth[i].R for i in range(4)},
                                {i: good.ground_truth[i].c for i in range(4)})
        report = evaluate_dataset([good, split, good], [exact, None, None], reasons=["", "", "solver blew up"])
        assert (report.n_evaluated, report.n_skipped, report.n_failed) == (1, 1, 1)
        assert report.n_evaluated + report.n_skipped + report.n_failed == 3
        assert [r.status for r in report.per_graph] == ["ok", "skipped", "failed"]
        assert "solver blew up" in report.per_graph_csv()
        d = report.to_dict()
        assert d["n_graphs_evaluated"] == 1 and d["n_graphs_skipped_multicomponent"] == 1

    def test_all_failed_report_is_nan(self, rng):
        g = graph_from_poses(*random_poses(3, rng), [(0, 1), (1, 2), (0, 2)])
        report = evaluate_dataset([g], [None])
        assert math.isnan(report.rotation.median)
        assert "nan" in report.to_csv()

    def test_errors(self, rng):
        with pytest.raises(EmptyDataset):
            evaluate_dataset([], [])
        g = graph_from_poses(*random_poses(3, rng), [(0, 1), (1, 2), (0, 2)])
        with pytest.raises(LengthMismatch):
            evaluate_dataset([g], [])

    def test_csv_layout(self):
        report = MetricsReport(summarize([1.0], ROTATION_THRESHOLDS_DEG), summarize([0.2], TRANSLATION_THRESHOLDS_M),
                               1, 0, per_graph=(GraphResult(0, "ok", 1.0, 0.2),))
        header, row = report.to_csv().splitlines()
        assert header == CSV_HEADER
        assert row == ("100.000000,100.000000,100.000000,100.000000,100.000000,1.000000,"
                       "0.000000,0.000000,100.000000,100.000000,100.000000,0.200000")


def folded_normal_bin_probs(edges: np.ndarray, sigma: float) -> np.ndarray:
    cdf = np.array([math.erf(e / (sigma * math.sqrt(2))) for e in edges])
    probs = np.diff(cdf)
    probs[-1] += 1.0 - cdf[-1]
    return probs


class TestHistogram:
    def test_zeros_in_first_bin(self):
        h = histogram(np.zeros(7), 5.0, 180.0)
        assert h.counts[0] == 7 and h.counts.sum() == 7

    def test_overflow_clamped(self):
        h = histogram([179, 180, 180], 5.0, 180.0)
        assert len(h.counts) == 36
        assert h.counts[-1] == 3

    def test_centers_and_csv(self):
        h = histogram([1.0, 2.0, 12.0], 5.0, 15.0)
        assert list(h.centers) == [2.5, 7.5, 12.5]
        assert h.to_csv() == "bin_center,count\n2.5,2.000000\n7.5,0.000000\n12.5,1.000000\n"

    def test_log_view(self):
        h = histogram([1.0] * 100 + [12.0], 5.0, 15.0, scale="log10")
        assert h.values[0] == pytest.approx(2.0)
        assert np.isnan(h.values[1]) and h.values[2] == 0.0
        assert "nan" in h.to_csv()

    @given(st.lists(st.floats(0, 400, allow_nan=False), max_size=100), st.floats(0.5, 20.0))
    def test_counts_sum_to_samples(self, errors, width):
        assert histogram(errors, width, 180.0).counts.sum() == len(errors)

    def test_folded_normal_distribution(self):
        sigma, n = 5.0, 10_000
        samples = np.abs(np.random.default_rng(2024).normal(0.0, sigma, n))
        h = histogram(samples, 1.0, 20.0)
        p = folded_normal_bin_probs(h.edges[:-1].tolist() + [h.edges[-1]], sigma)
        expected = n * p
        band = 3 * np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(h.counts - expected) <= band)

    def test_invalid(self):
        with pytest.raises(ValueError):
            histogram([1.0], 0.0, 10.0)
        with pytest.raises(ValueError):
            histogram([1.0], 1.0, 10.0, scale="sqrt")
